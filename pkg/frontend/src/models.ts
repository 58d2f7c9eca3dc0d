/**
 * Extractor model specs and inference backends.
 *
 * Each spec fixes the preprocessing (sample rate, log-mel framing,
 * segmentation) and the published embedding width. Actual checkpoint
 * inference is pluggable behind `ModelBackend`; the built-in stub backend
 * produces deterministic pseudo-embeddings from mel statistics so the full
 * pipeline (decode, frame, pool, write) runs and is testable without
 * checkpoint files. Point `--backend` at a module exporting
 * `createBackend(spec)` to run a real model.
 */

import { MelParams } from './dsp.js';

export type ModelName = 'byola' | 'panns' | 'vggish';

export interface ExtractorSpec {
  model: ModelName;
  outputDim: number;
  mel: MelParams;
  /** Segment length in frames; 0 means one segment per whole track. */
  segmentFrames: number;
}

export const MODEL_SPECS: Record<ModelName, ExtractorSpec> = {
  // one embedding per track, concatenated-pooling encoder width 3072
  byola: {
    model: 'byola',
    outputDim: 3072,
    mel: { sampleRate: 16000, nFft: 1024, winLength: 1024, hopLength: 160,
           numMels: 64, fMin: 60, fMax: 7800, logOffset: 1e-6 },
    segmentFrames: 0,
  },
  // cnn14: 2048-wide embedding per segment, mean-pooled over the clip
  panns: {
    model: 'panns',
    outputDim: 2048,
    mel: { sampleRate: 32000, nFft: 1024, winLength: 1024, hopLength: 320,
           numMels: 64, fMin: 50, fMax: 14000, logOffset: 1e-6 },
    segmentFrames: 1000, // 10 s at 100 frames/s
  },
  // 0.96 s patches of 96 x 64 log-mel frames, 128-wide embeddings
  vggish: {
    model: 'vggish',
    outputDim: 128,
    mel: { sampleRate: 16000, nFft: 512, winLength: 400, hopLength: 160,
           numMels: 64, fMin: 125, fMax: 7500, logOffset: 0.01 },
    segmentFrames: 96,
  },
};

export interface ModelBackend {
  /** Identity string recorded in the output manifest. */
  readonly checkpoint: string;
  /** Embed one segment of log-mel frames (frames x mels) into outputDim values. */
  embedSegment(melFrames: number[][]): number[];
}

/** splitmix32: tiny deterministic hash-to-float for the stub projection. */
function pseudoWeight(i: number, j: number): number {
  let h = (i * 0x9e3779b9 + j * 0x85ebca6b + 0x1b873593) >>> 0;
  h ^= h >>> 16; h = Math.imul(h, 0x21f0aaad) >>> 0;
  h ^= h >>> 15; h = Math.imul(h, 0x735a2d97) >>> 0;
  h ^= h >>> 15;
  return (h / 0xffffffff) * 2 - 1;
}

/**
 * Deterministic stand-in backend: projects per-mel-bin statistics through
 * a fixed pseudo-random matrix. Same input bytes, same output, on any
 * machine. Not a trained model; useful for pipeline tests and dry runs.
 */
export class StubBackend implements ModelBackend {
  readonly checkpoint: string;

  constructor(private spec: ExtractorSpec) {
    this.checkpoint = `stub-${spec.model}-v1`;
  }

  embedSegment(melFrames: number[][]): number[] {
    const numMels = this.spec.mel.numMels;
    const mean = new Float64Array(numMels);
    const sq = new Float64Array(numMels);
    const n = Math.max(1, melFrames.length);
    for (const frame of melFrames) {
      for (let m = 0; m < numMels; m++) {
        mean[m] += frame[m];
        sq[m] += frame[m] * frame[m];
      }
    }
    const features = new Float64Array(numMels * 2);
    for (let m = 0; m < numMels; m++) {
      mean[m] /= n;
      features[m] = mean[m];
      features[numMels + m] = Math.sqrt(Math.max(0, sq[m] / n - mean[m] * mean[m]));
    }
    const out = new Array<number>(this.spec.outputDim);
    for (let i = 0; i < this.spec.outputDim; i++) {
      let acc = 0;
      for (let j = 0; j < features.length; j++) {
        acc += pseudoWeight(i, j) * features[j];
      }
      out[i] = acc / Math.sqrt(features.length);
    }
    return out;
  }
}

export async function loadBackend(spec: ExtractorSpec,
                                  modulePath?: string): Promise<ModelBackend> {
  if (!modulePath) return new StubBackend(spec);
  const mod = await import(modulePath);
  if (typeof mod.createBackend !== 'function') {
    throw new Error(`backend module ${modulePath} does not export createBackend`);
  }
  return mod.createBackend(spec);
}
