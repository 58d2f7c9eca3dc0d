#!/usr/bin/env node
/**
 * embed-extractor extract --audio-dir DIR --model byola|panns|vggish
 *                         --out-manifest PATH [--name NAME]
 *                         [--labels-csv FILE] [--backend MODULE]
 *
 * Exit codes: 0 success, 1 usage error, 2 extraction failure.
 */

import { extract } from './extract.js';
import { loadBackend, MODEL_SPECS, ModelName } from './models.js';

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got ${key}`);
    }
    args.set(key.slice(2), argv[i + 1]);
  }
  return args;
}

export async function main(argv: string[]): Promise<number> {
  if (argv[0] !== 'extract') {
    console.error('usage: embed-extractor extract --audio-dir DIR ' +
                  '--model byola|panns|vggish --out-manifest PATH ' +
                  '[--name NAME] [--labels-csv FILE] [--backend MODULE]');
    return 1;
  }
  let args: Map<string, string>;
  try {
    args = parseArgs(argv.slice(1));
  } catch (err) {
    console.error(String(err));
    return 1;
  }
  const model = args.get('model') as ModelName | undefined;
  const audioDir = args.get('audio-dir');
  const outManifest = args.get('out-manifest');
  if (!model || !(model in MODEL_SPECS) || !audioDir || !outManifest) {
    console.error('missing or invalid --model/--audio-dir/--out-manifest');
    return 1;
  }
  const spec = MODEL_SPECS[model];
  try {
    const backend = await loadBackend(spec, args.get('backend'));
    const result = await extract(spec, backend, {
      audioDir,
      outManifest,
      datasetName: args.get('name') ?? 'audio',
      labelsCsv: args.get('labels-csv'),
    });
    console.log(`${result.written}/${result.tracks} tracks -> ${outManifest} ` +
                `(${result.classNames.length} classes, dim ${spec.outputDim}, ` +
                `${result.skipped.length} skipped)`);
    return 0;
  } catch (err) {
    console.error(`extraction failed: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

const invokedDirectly = process.argv[1] &&
  import.meta.url.endsWith(process.argv[1].split('/').pop() ?? '');
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => process.exit(code));
}
