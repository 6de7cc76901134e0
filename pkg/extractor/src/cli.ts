#!/usr/bin/env node
/** CLI: `extract` dumps feature files, `convert` emits annotations. */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'

import { ALL_POOL_LAYERS, PoolLayerName } from './layers'
import { runExtraction } from './extract'
import { convertAnnotations, loadMergeMap, writeAnnotationFile } from './convert'

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command('extract', 'run VGG-16 over a dataset and dump feature files',
      y => y
        .option('dataset', { type: 'string', demandOption: true,
                             describe: 'dataset root directory' })
        .option('manifest', { type: 'string', demandOption: true,
                              describe: 'dataset manifest JSON' })
        .option('class', { type: 'string', demandOption: true })
        .option('split', { choices: ['train', 'val'] as const,
                           default: 'train' as const })
        .option('layers', { type: 'string', default: 'pool3,pool4,pool5' })
        .option('out', { type: 'string', demandOption: true })
        .option('weights', { type: 'string',
                             describe: 'tfjs layers-model directory' })
        .option('seed', { type: 'number', default: 0 }))
    .command('convert', 'convert dataset annotations to the corpus format',
      y => y
        .option('manifest', { type: 'string', demandOption: true })
        .option('merge-map', { type: 'string' })
        .option('split', { choices: ['train', 'val'] as const })
        .option('out', { type: 'string', demandOption: true }))
    .demandCommand(1)
    .strict()
    .parse()

  const command = argv._[0]
  if (command === 'extract') {
    const layers = (argv.layers as string).split(',')
      .map(s => s.trim()).filter(Boolean) as PoolLayerName[]
    for (const l of layers) {
      if (!ALL_POOL_LAYERS.includes(l)) {
        console.error(`error: unknown layer ${l}`)
        return 1
      }
    }
    const result = await runExtraction({
      datasetRoot: argv.dataset as string,
      manifestPath: argv.manifest as string,
      objectClass: argv.class as string,
      split: argv.split as 'train' | 'val',
      layers,
      outDir: argv.out as string,
      weightsDir: argv.weights as string | undefined,
      seed: argv.seed as number,
    })
    console.log(`wrote ${result.written.length} feature files -> ${argv.out}`)
    for (const s of result.skipped) {
      console.error(`skipped ${s.id}: ${s.reason}`)
    }
    return 0
  }

  if (command === 'convert') {
    const mergeMap = argv['merge-map']
      ? loadMergeMap(argv['merge-map'] as string) : null
    const result = convertAnnotations(argv.manifest as string, mergeMap,
                                      argv.split as 'train' | 'val' | undefined)
    writeAnnotationFile(result, argv.out as string)
    console.log(`wrote ${result.instances.length} instances -> ${argv.out} ` +
                `(${result.discarded} discarded, ` +
                `${result.outsideBox.length} outside the box)`)
    return 0
  }
  return 2
}

main().then(code => { process.exitCode = code })
  .catch(err => { console.error(`error: ${err.message ?? err}`); process.exitCode = 1 })
