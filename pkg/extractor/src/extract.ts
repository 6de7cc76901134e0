/**
 * Extraction jobs: run the feature model over every dataset image of one
 * class/split and emit one VCFT file per (image, layer), plus a manifest
 * listing every emitted file with a sha256 checksum. Unreadable images are
 * logged and skipped with a manifest entry. Reruns are idempotent: same
 * inputs and seed produce byte-identical files.
 */

import * as crypto from 'crypto'
import * as fs from 'fs'
import * as path from 'path'

import { DatasetManifest, DatasetImage, cropSize, loadDatasetManifest,
         resolveImagePath } from './dataset'
import { ALL_POOL_LAYERS, PoolLayerName, VGG16_LAYERS } from './layers'
import { decodePng, preprocessCrop } from './preprocess'
import { azimuthToBin } from './viewpoint'
import { FeatureModel, buildFeatureModel, ensureBackend, extractLayers,
         loadWeightsInto } from './vgg16'
import { writeFeatureFile } from './vcft'

export interface ExtractionJob {
  datasetRoot: string
  manifestPath: string
  objectClass: string
  split: 'train' | 'val'
  layers: PoolLayerName[]
  outDir: string
  weightsDir?: string
  seed?: number
}

export interface ExtractionResult {
  written: string[]
  skipped: Array<{ id: string; reason: string }>
  manifestFile: string
}

function sha256(filePath: string): string {
  return crypto.createHash('sha256')
    .update(fs.readFileSync(filePath)).digest('hex')
}

export async function runExtraction(job: ExtractionJob,
                                    model?: FeatureModel
                                    ): Promise<ExtractionResult> {
  await ensureBackend()
  const dataset = loadDatasetManifest(job.manifestPath)
  if (dataset.objectClass !== job.objectClass) {
    throw new Error(
      `manifest is for class ${dataset.objectClass}, job wants ` +
      job.objectClass)
  }
  const layers = job.layers.length ? job.layers : ALL_POOL_LAYERS
  const fm = model ?? buildFeatureModel(layers, job.seed ?? 0)
  if (job.weightsDir) loadWeightsInto(fm, job.weightsDir)
  const missing = layers.filter(l => !fm.layers.includes(l))
  if (missing.length) {
    throw new Error(`model lacks requested layers: ${missing.join(', ')}`)
  }
  const emitLayers = fm.layers.filter(l => layers.includes(l))

  fs.mkdirSync(job.outDir, { recursive: true })
  const written: string[] = []
  const skipped: Array<{ id: string; reason: string }> = []

  const images = dataset.images.filter(im => im.split === job.split)
  for (const image of images) {
    let decoded
    try {
      decoded = decodePng(resolveImagePath(job.datasetRoot, image))
    } catch (err) {
      skipped.push({ id: image.id, reason: String(err) })
      continue
    }
    const crop = preprocessCrop(decoded, image.bbox)
    const size = cropSize(image.bbox)
    const features = await extractLayers(fm, crop)
    crop.dispose()
    for (const layerName of emitLayers) {
      const tensor = features.get(layerName)!
      const [h, w, c] = tensor.shape
      const spec = VGG16_LAYERS[layerName]
      if (c !== spec.channels) {
        throw new Error(
          `${layerName} produced ${c} channels, expected ${spec.channels}`)
      }
      const fileName = `${image.id}_${layerName}.vcft`
      writeFeatureFile({
        layer: spec,
        width: w,
        height: h,
        data: new Float32Array(tensor.dataSync()),
        meta: {
          imageId: image.id,
          objectClass: dataset.objectClass,
          cropWidth: size.width,
          cropHeight: size.height,
          viewpointBin: azimuthToBin(image.azimuthDeg),
          sourcePath: image.path,
        },
      }, path.join(job.outDir, fileName))
      written.push(fileName)
    }
    for (const tensor of features.values()) tensor.dispose()
  }

  const manifestFile = path.join(job.outDir, 'manifest.txt')
  const lines = [
    `# class=${job.objectClass}`,
    `# split=${job.split}`,
    `# layers=${emitLayers.join(',')}`,
    `# resize=bilinear`,
    `# preprocessing=bgr_mean_subtract`,
    `# weights=${job.weightsDir ?? `random(seed=${job.seed ?? 0})`}`,
  ]
  for (const name of written) {
    lines.push(`${sha256(path.join(job.outDir, name))}  ${name}`)
  }
  for (const s of skipped) {
    lines.push(`# SKIPPED ${s.id} ${s.reason.replace(/\n/g, ' ')}`)
  }
  fs.writeFileSync(manifestFile, lines.join('\n') + '\n')
  return { written, skipped, manifestFile }
}
