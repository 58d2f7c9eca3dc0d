/**
 * Minimal RIFF/WAVE decoder: PCM 16/24/32-bit and 32-bit float, any
 * channel count (mixed down to mono), with linear resampling.
 */

export interface AudioClip {
  sampleRate: number;
  samples: Float64Array; // mono, in [-1, 1]
}

export function decodeWav(buf: Buffer): AudioClip {
  if (buf.length < 12 || buf.toString('ascii', 0, 4) !== 'RIFF' ||
      buf.toString('ascii', 8, 12) !== 'WAVE') {
    throw new Error('not a RIFF/WAVE file');
  }
  let offset = 12;
  let format = 0;
  let channels = 0;
  let sampleRate = 0;
  let bitsPerSample = 0;
  let data: Buffer | null = null;
  while (offset + 8 <= buf.length) {
    const id = buf.toString('ascii', offset, offset + 4);
    const size = buf.readUInt32LE(offset + 4);
    const body = offset + 8;
    if (body + size > buf.length) {
      throw new Error(`truncated ${id} chunk at offset ${offset}`);
    }
    if (id === 'fmt ') {
      format = buf.readUInt16LE(body);
      channels = buf.readUInt16LE(body + 2);
      sampleRate = buf.readUInt32LE(body + 4);
      bitsPerSample = buf.readUInt16LE(body + 14);
    } else if (id === 'data') {
      data = buf.subarray(body, body + size);
    }
    offset = body + size + (size % 2); // chunks are word-aligned
  }
  if (!data || channels === 0 || sampleRate === 0) {
    throw new Error('missing fmt/data chunk');
  }

  const bytesPer = bitsPerSample / 8;
  const frames = Math.floor(data.length / (bytesPer * channels));
  const mono = new Float64Array(frames);
  for (let i = 0; i < frames; i++) {
    let acc = 0;
    for (let c = 0; c < channels; c++) {
      const at = (i * channels + c) * bytesPer;
      if (format === 3 && bitsPerSample === 32) {
        acc += data.readFloatLE(at);
      } else if (format === 1 && bitsPerSample === 16) {
        acc += data.readInt16LE(at) / 32768;
      } else if (format === 1 && bitsPerSample === 32) {
        acc += data.readInt32LE(at) / 2147483648;
      } else if (format === 1 && bitsPerSample === 24) {
        const v = data[at] | (data[at + 1] << 8) | (data[at + 2] << 16);
        acc += (v >= 0x800000 ? v - 0x1000000 : v) / 8388608;
      } else {
        throw new Error(`unsupported WAV encoding: format ${format}, ` +
                        `${bitsPerSample} bits`);
      }
    }
    mono[i] = acc / channels;
  }
  return { sampleRate, samples: mono };
}

/** Linear-interpolation resampling; identity when rates already match. */
export function resample(clip: AudioClip, targetRate: number): AudioClip {
  if (clip.sampleRate === targetRate) return clip;
  const ratio = clip.sampleRate / targetRate;
  const outLen = Math.max(1, Math.floor(clip.samples.length / ratio));
  const out = new Float64Array(outLen);
  for (let i = 0; i < outLen; i++) {
    const pos = i * ratio;
    const i0 = Math.floor(pos);
    const i1 = Math.min(i0 + 1, clip.samples.length - 1);
    const frac = pos - i0;
    out[i] = clip.samples[i0] * (1 - frac) + clip.samples[i1] * frac;
  }
  return { sampleRate: targetRate, samples: out };
}
