/**
 * VGG-16 convolutional trunk with pool3/pool4/pool5 taps.
 *
 * Built with keras layer names (block1_conv1 .. block5_pool) so weights
 * converted from a pretrained keras VGG-16 drop in by name. Without a
 * weights directory the filters are seeded-random: feature values are then
 * meaningless but every shape, format, and pipeline contract holds, which
 * is all the shape checks need.
 */

import * as fs from 'fs'
import * as path from 'path'

import * as tf from '@tensorflow/tfjs'

import { PoolLayerName } from './layers'

const BLOCKS: Array<[number, number]> = [
  [64, 2], [128, 2], [256, 3], [512, 3], [512, 3],
]

const POOL_OF: Record<PoolLayerName, string> = {
  pool3: 'block3_pool',
  pool4: 'block4_pool',
  pool5: 'block5_pool',
}

let backendReady: Promise<void> | null = null

/** Prefer the wasm backend (an order of magnitude faster than plain cpu). */
export function ensureBackend(): Promise<void> {
  if (!backendReady) {
    backendReady = (async () => {
      try {
        const wasm = require('@tensorflow/tfjs-backend-wasm')
        const dist = path.dirname(
          require.resolve('@tensorflow/tfjs-backend-wasm/dist/tf-backend-wasm.js'))
        wasm.setWasmPaths(dist + path.sep)
        await tf.setBackend('wasm')
      } catch {
        await tf.setBackend('cpu')
      }
      await tf.ready()
    })()
  }
  return backendReady
}

export interface FeatureModel {
  model: tf.LayersModel
  layers: PoolLayerName[]
}

export function buildFeatureModel(layers: PoolLayerName[],
                                  seed = 0): FeatureModel {
  const input = tf.input({ shape: [null, null, 3] as any })
  let x: tf.SymbolicTensor = input
  let layerSeed = seed
  for (let b = 0; b < BLOCKS.length; b++) {
    const [filters, reps] = BLOCKS[b]
    for (let r = 0; r < reps; r++) {
      x = tf.layers.conv2d({
        filters,
        kernelSize: 3,
        padding: 'same',
        activation: 'relu',
        name: `block${b + 1}_conv${r + 1}`,
        kernelInitializer: tf.initializers.glorotUniform({ seed: ++layerSeed }),
        biasInitializer: 'zeros',
      }).apply(x) as tf.SymbolicTensor
    }
    x = tf.layers.maxPooling2d({
      poolSize: 2, strides: 2, name: `block${b + 1}_pool`,
    }).apply(x) as tf.SymbolicTensor
  }
  const trunk = tf.model({ inputs: input, outputs: x })
  const ordered = (['pool3', 'pool4', 'pool5'] as PoolLayerName[])
    .filter(l => layers.includes(l))
  const taps = ordered.map(
    l => trunk.getLayer(POOL_OF[l]).output as tf.SymbolicTensor)
  return {
    model: tf.model({ inputs: input, outputs: taps }),
    layers: ordered,
  }
}

/**
 * Load pretrained weights from a tfjs layers-model directory (model.json +
 * binary shards), assigning by layer name. Only conv-layer kernels/biases
 * are consumed; anything without a matching layer name is ignored, and
 * missing conv weights are an error.
 */
export function loadWeightsInto(fm: FeatureModel, weightsDir: string): void {
  const modelJson = JSON.parse(
    fs.readFileSync(path.join(weightsDir, 'model.json'), 'utf-8'))
  const manifest = modelJson.weightsManifest
  if (!Array.isArray(manifest)) {
    throw new Error(`${weightsDir}/model.json has no weightsManifest`)
  }
  const byName = new Map<string, tf.Tensor>()
  for (const group of manifest) {
    const buffers = group.paths.map((p: string) =>
      fs.readFileSync(path.join(weightsDir, p)))
    const blob = Buffer.concat(buffers)
    let offset = 0
    for (const spec of group.weights) {
      if (spec.dtype !== 'float32') {
        throw new Error(`unsupported weight dtype ${spec.dtype}`)
      }
      const size = spec.shape.reduce((a: number, b: number) => a * b, 1)
      const values = new Float32Array(size)
      for (let i = 0; i < size; i++) {
        values[i] = blob.readFloatLE(offset + 4 * i)
      }
      offset += 4 * size
      byName.set(spec.name, tf.tensor(values, spec.shape))
    }
  }
  for (const layer of fm.model.layers) {
    if (!layer.name.includes('_conv')) continue
    const kernel = byName.get(`${layer.name}/kernel`)
    const bias = byName.get(`${layer.name}/bias`)
    if (!kernel || !bias) {
      throw new Error(`weights for layer ${layer.name} missing`)
    }
    layer.setWeights([kernel, bias])
  }
}

/**
 * Forward one preprocessed crop; returns per requested layer a tensor of
 * shape [h, w, channels].
 */
export async function extractLayers(fm: FeatureModel, crop: tf.Tensor3D
                                    ): Promise<Map<PoolLayerName, tf.Tensor3D>> {
  await ensureBackend()
  const batched = crop.expandDims(0)
  const raw = fm.model.predict(batched) as tf.Tensor | tf.Tensor[]
  const list = Array.isArray(raw) ? raw : [raw]
  const out = new Map<PoolLayerName, tf.Tensor3D>()
  fm.layers.forEach((name, k) => {
    out.set(name, list[k].squeeze([0]) as tf.Tensor3D)
  })
  batched.dispose()
  return out
}
