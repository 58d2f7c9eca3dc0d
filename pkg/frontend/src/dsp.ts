/**
 * Spectrogram front end: Hann windowing, radix-2 FFT, and an HTK-style
 * log-mel filterbank.
 */

export function hannWindow(n: number): Float64Array {
  const w = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    w[i] = 0.5 - 0.5 * Math.cos((2 * Math.PI * i) / n);
  }
  return w;
}

/** In-place iterative radix-2 FFT; lengths must be powers of two. */
export function fft(re: Float64Array, im: Float64Array): void {
  const n = re.length;
  if ((n & (n - 1)) !== 0) throw new Error(`FFT length ${n} is not a power of 2`);
  for (let i = 1, j = 0; i < n; i++) {
    let bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      [re[i], re[j]] = [re[j], re[i]];
      [im[i], im[j]] = [im[j], im[i]];
    }
  }
  for (let len = 2; len <= n; len <<= 1) {
    const ang = (-2 * Math.PI) / len;
    const wr = Math.cos(ang);
    const wi = Math.sin(ang);
    for (let i = 0; i < n; i += len) {
      let cr = 1;
      let ci = 0;
      for (let k = 0; k < len / 2; k++) {
        const ur = re[i + k];
        const ui = im[i + k];
        const vr = re[i + k + len / 2] * cr - im[i + k + len / 2] * ci;
        const vi = re[i + k + len / 2] * ci + im[i + k + len / 2] * cr;
        re[i + k] = ur + vr;
        im[i + k] = ui + vi;
        re[i + k + len / 2] = ur - vr;
        im[i + k + len / 2] = ui - vi;
        const ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

export function hzToMel(hz: number): number {
  return 2595 * Math.log10(1 + hz / 700);
}

export function melToHz(mel: number): number {
  return 700 * (10 ** (mel / 2595) - 1);
}

/** Triangular mel filterbank over FFT bins, (numMels x numBins). */
export function melFilterbank(
  numMels: number, nFft: number, sampleRate: number,
  fMin: number, fMax: number,
): Float64Array[] {
  const numBins = nFft / 2 + 1;
  const melPoints = new Float64Array(numMels + 2);
  const lo = hzToMel(fMin);
  const hi = hzToMel(fMax);
  for (let i = 0; i < numMels + 2; i++) {
    melPoints[i] = melToHz(lo + ((hi - lo) * i) / (numMels + 1));
  }
  const binHz = sampleRate / nFft;
  const bank: Float64Array[] = [];
  for (let m = 0; m < numMels; m++) {
    const filt = new Float64Array(numBins);
    const [left, center, right] = [melPoints[m], melPoints[m + 1], melPoints[m + 2]];
    for (let b = 0; b < numBins; b++) {
      const hz = b * binHz;
      if (hz > left && hz < center) {
        filt[b] = (hz - left) / (center - left);
      } else if (hz >= center && hz < right) {
        filt[b] = (right - hz) / (right - center);
      }
    }
    bank.push(filt);
  }
  return bank;
}

export interface MelParams {
  sampleRate: number;
  nFft: number;
  winLength: number;
  hopLength: number;
  numMels: number;
  fMin: number;
  fMax: number;
  logOffset: number;
}

/** Frame the signal and return log-mel features, one row per frame. */
export function logMelSpectrogram(samples: Float64Array, p: MelParams): number[][] {
  const frames = Math.max(0, 1 + Math.floor((samples.length - p.winLength) / p.hopLength));
  const window = hannWindow(p.winLength);
  const bank = melFilterbank(p.numMels, p.nFft, p.sampleRate, p.fMin, p.fMax);
  const numBins = p.nFft / 2 + 1;
  const out: number[][] = [];
  const re = new Float64Array(p.nFft);
  const im = new Float64Array(p.nFft);
  const power = new Float64Array(numBins);
  for (let f = 0; f < frames; f++) {
    re.fill(0);
    im.fill(0);
    const start = f * p.hopLength;
    for (let i = 0; i < p.winLength; i++) {
      re[i] = samples[start + i] * window[i];
    }
    fft(re, im);
    for (let b = 0; b < numBins; b++) {
      power[b] = re[b] * re[b] + im[b] * im[b];
    }
    const mels = new Array<number>(p.numMels);
    for (let m = 0; m < p.numMels; m++) {
      let acc = 0;
      const filt = bank[m];
      for (let b = 0; b < numBins; b++) acc += filt[b] * power[b];
      mels[m] = Math.log(acc + p.logOffset);
    }
    out.push(mels);
  }
  return out;
}
