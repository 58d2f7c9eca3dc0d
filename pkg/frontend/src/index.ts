export { decodeWav, resample } from './wav.js';
export { fft, hannWindow, logMelSpectrogram, melFilterbank } from './dsp.js';
export { MODEL_SPECS, StubBackend, loadBackend } from './models.js';
export type { ExtractorSpec, ModelBackend, ModelName } from './models.js';
export { embedTrack, extract, listAudioFiles, readLabelsCsv } from './extract.js';
export { encodeEmb1, readEmb1, writeEmb1, writeLabels, writeManifest,
         writeDatasetTrio } from './formats.js';
