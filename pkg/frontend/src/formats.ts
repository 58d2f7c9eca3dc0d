/**
 * On-disk formats shared with the training engine.
 *
 * Embeddings ("EMB1"): magic `EMB1`, u32 LE version (1), u32 LE row count,
 * u32 LE dimension, then rows x dim float32 LE values, row-major.
 * Labels: one line per sample, `index<TAB>class_id<TAB>name`.
 * Manifest: `key=value` lines with paths relative to the manifest file.
 */

import * as fs from 'fs';
import * as path from 'path';

export const EMB_MAGIC = 'EMB1';
export const EMB_VERSION = 1;

export function encodeEmb1(rows: number, dim: number, data: Float32Array): Buffer {
  if (data.length !== rows * dim) {
    throw new Error(`EMB1 payload length ${data.length} != ${rows}x${dim}`);
  }
  const header = Buffer.alloc(16);
  header.write(EMB_MAGIC, 0, 'ascii');
  header.writeUInt32LE(EMB_VERSION, 4);
  header.writeUInt32LE(rows, 8);
  header.writeUInt32LE(dim, 12);
  const payload = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    payload.writeFloatLE(data[i], i * 4);
  }
  return Buffer.concat([header, payload]);
}

export function writeEmb1(file: string, rows: number[][]): void {
  const n = rows.length;
  const dim = n > 0 ? rows[0].length : 0;
  const flat = new Float32Array(n * dim);
  rows.forEach((row, i) => {
    if (row.length !== dim) {
      throw new Error(`row ${i} has dimension ${row.length}, expected ${dim}`);
    }
    flat.set(row.map(Math.fround), i * dim);
  });
  fs.writeFileSync(file, encodeEmb1(n, dim, flat));
}

export interface Emb1Matrix {
  rows: number;
  dim: number;
  data: Float32Array;
}

export function readEmb1(file: string): Emb1Matrix {
  const blob = fs.readFileSync(file);
  if (blob.length < 16) {
    throw new Error(`${file}: header needs 16 bytes, file has ${blob.length}`);
  }
  if (blob.toString('ascii', 0, 4) !== EMB_MAGIC) {
    throw new Error(`${file}: bad magic at offset 0`);
  }
  const version = blob.readUInt32LE(4);
  if (version !== EMB_VERSION) {
    throw new Error(`${file}: unsupported version ${version} at offset 4`);
  }
  const rows = blob.readUInt32LE(8);
  const dim = blob.readUInt32LE(12);
  const expected = 16 + rows * dim * 4;
  if (blob.length !== expected) {
    throw new Error(`${file}: payload for ${rows}x${dim} needs ${expected} ` +
                    `bytes, file has ${blob.length}`);
  }
  const data = new Float32Array(rows * dim);
  for (let i = 0; i < data.length; i++) {
    data[i] = blob.readFloatLE(16 + i * 4);
  }
  return { rows, dim, data };
}

export function writeLabels(file: string, labels: number[], names: string[]): void {
  const lines = labels.map((lab, i) => `${i}\t${lab}\t${names[lab]}`);
  fs.writeFileSync(file, lines.join('\n') + (lines.length ? '\n' : ''), 'utf-8');
}

export interface ManifestFields {
  name: string;
  embeddings: string;
  labels: string;
  extractor: string;
  extras?: Record<string, string>;
}

export function writeManifest(file: string, fields: ManifestFields): void {
  const lines = [
    `name=${fields.name}`,
    `embeddings=${fields.embeddings}`,
    `labels=${fields.labels}`,
    `extractor=${fields.extractor}`,
  ];
  for (const [key, value] of Object.entries(fields.extras ?? {})) {
    lines.push(`${key}=${value}`);
  }
  fs.writeFileSync(file, lines.join('\n') + '\n', 'utf-8');
}

/** Write the embeddings + labels + manifest trio next to the manifest path. */
export function writeDatasetTrio(
  manifestPath: string,
  rows: number[][],
  labels: number[],
  classNames: string[],
  datasetName: string,
  extractor: string,
  extras?: Record<string, string>,
): void {
  const dir = path.dirname(manifestPath);
  const stem = path.basename(manifestPath).replace(/\.[^.]+$/, '');
  fs.mkdirSync(dir, { recursive: true });
  writeEmb1(path.join(dir, `${stem}.emb`), rows);
  writeLabels(path.join(dir, `${stem}.labels.tsv`), labels, classNames);
  writeManifest(manifestPath, {
    name: datasetName,
    embeddings: `${stem}.emb`,
    labels: `${stem}.labels.tsv`,
    extractor,
    extras,
  });
}
