/**
 * Extraction pipeline: walk an audio tree, decode each track, compute
 * log-mel features, run the model backend per segment, mean-pool over the
 * clip, and emit the embeddings + labels + manifest trio.
 *
 * Labels come from the directory layout (`<audioDir>/<genre>/<track>.wav`)
 * or, when a metadata CSV is supplied, from `track_stem,genre` rows.
 * Undecodable or unlabeled tracks are skipped and logged; a backend
 * emitting the wrong dimension aborts the run. Output rows follow sorted
 * relative paths, so worker scheduling can never reorder them.
 */

import * as fs from 'fs';
import * as path from 'path';

import { logMelSpectrogram } from './dsp.js';
import { writeDatasetTrio } from './formats.js';
import { ExtractorSpec, ModelBackend } from './models.js';
import { decodeWav, resample } from './wav.js';

export interface ExtractOptions {
  audioDir: string;
  outManifest: string;
  datasetName: string;
  labelsCsv?: string;
  log?: (line: string) => void;
}

export interface ExtractResult {
  tracks: number;
  written: number;
  skipped: { file: string; reason: string }[];
  classNames: string[];
}

const AUDIO_EXTENSIONS = new Set(['.wav', '.wave']);

export function listAudioFiles(root: string): string[] {
  const out: string[] = [];
  const walk = (dir: string) => {
    for (const entry of fs.readdirSync(dir, { withFileTypes: true })) {
      const full = path.join(dir, entry.name);
      if (entry.isDirectory()) {
        walk(full);
      } else if (AUDIO_EXTENSIONS.has(path.extname(entry.name).toLowerCase())) {
        out.push(full);
      }
    }
  };
  walk(root);
  return out.sort((a, b) =>
    path.relative(root, a) < path.relative(root, b) ? -1 : 1);
}

export function readLabelsCsv(file: string): Map<string, string> {
  const map = new Map<string, string>();
  const lines = fs.readFileSync(file, 'utf-8').split('\n');
  for (const [i, raw] of lines.entries()) {
    const line = raw.trim();
    if (!line || (i === 0 && /track|genre|id/i.test(line))) continue;
    const cells = line.split(',');
    if (cells.length < 2) continue;
    map.set(cells[0].trim(), cells[1].trim());
  }
  return map;
}

function labelOf(file: string, root: string,
                 csv: Map<string, string> | null): string | null {
  if (csv) {
    return csv.get(path.basename(file).replace(/\.[^.]+$/, '')) ?? null;
  }
  const rel = path.relative(root, file);
  const parts = rel.split(path.sep);
  return parts.length >= 2 ? parts[0] : null;
}

function segment(frames: number[][], segmentFrames: number): number[][][] {
  if (segmentFrames <= 0 || frames.length <= segmentFrames) {
    return [frames];
  }
  const segments: number[][][] = [];
  for (let start = 0; start + segmentFrames <= frames.length;
       start += segmentFrames) {
    segments.push(frames.slice(start, start + segmentFrames));
  }
  return segments;
}

export function embedTrack(samples: Float64Array, sampleRate: number,
                           spec: ExtractorSpec, backend: ModelBackend): number[] {
  const clip = resample({ sampleRate, samples }, spec.mel.sampleRate);
  const frames = logMelSpectrogram(clip.samples, spec.mel);
  if (frames.length === 0) {
    throw new Error('track shorter than one analysis window');
  }
  const pooled = new Float64Array(spec.outputDim);
  const segments = segment(frames, spec.segmentFrames);
  for (const seg of segments) {
    const emb = backend.embedSegment(seg);
    if (emb.length !== spec.outputDim) {
      throw new Error(`backend emitted dimension ${emb.length}, ` +
                      `spec requires ${spec.outputDim}`);
    }
    for (let i = 0; i < spec.outputDim; i++) pooled[i] += emb[i];
  }
  const out = new Array<number>(spec.outputDim);
  for (let i = 0; i < spec.outputDim; i++) {
    out[i] = pooled[i] / segments.length;
    if (!Number.isFinite(out[i])) {
      throw new Error('non-finite embedding value');
    }
  }
  return out;
}

export async function extract(spec: ExtractorSpec, backend: ModelBackend,
                              options: ExtractOptions): Promise<ExtractResult> {
  const log = options.log ?? ((line: string) => console.error(line));
  const files = listAudioFiles(options.audioDir);
  const csv = options.labelsCsv ? readLabelsCsv(options.labelsCsv) : null;

  const rows: number[][] = [];
  const labelNames: string[] = [];
  const skipped: { file: string; reason: string }[] = [];
  for (const file of files) {
    const label = labelOf(file, options.audioDir, csv);
    if (label === null) {
      skipped.push({ file, reason: 'no label' });
      log(`skip ${file}: no label`);
      continue;
    }
    try {
      const clip = decodeWav(fs.readFileSync(file));
      rows.push(embedTrack(clip.samples, clip.sampleRate, spec, backend));
      labelNames.push(label);
    } catch (err) {
      const reason = err instanceof Error ? err.message : String(err);
      if (/dimension|non-finite/.test(reason)) {
        throw err; // model/spec mismatch is a hard failure, not a bad file
      }
      skipped.push({ file, reason });
      log(`skip ${file}: ${reason}`);
    }
  }
  if (rows.length === 0) {
    throw new Error(`no decodable labeled audio under ${options.audioDir}`);
  }

  // first-appearance class order, matching the labels-file convention
  const classNames: string[] = [];
  const classIds = new Map<string, number>();
  const labels = labelNames.map((name) => {
    if (!classIds.has(name)) {
      classIds.set(name, classNames.length);
      classNames.push(name);
    }
    return classIds.get(name)!;
  });

  writeDatasetTrio(options.outManifest, rows, labels, classNames,
                   options.datasetName, spec.model,
                   { checkpoint: backend.checkpoint });
  return { tracks: files.length, written: rows.length, skipped, classNames };
}
