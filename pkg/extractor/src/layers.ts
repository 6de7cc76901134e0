/** VGG-16 pooling-layer geometry shared with the consumer toolkit. */

export interface LayerSpec {
  name: string
  channels: number
  stride: number
  rfSize: number
}

export const VGG16_LAYERS: Record<string, LayerSpec> = {
  pool3: { name: 'pool3', channels: 256, stride: 8, rfSize: 44 },
  pool4: { name: 'pool4', channels: 512, stride: 16, rfSize: 100 },
  pool5: { name: 'pool5', channels: 512, stride: 32, rfSize: 212 },
}

export type PoolLayerName = 'pool3' | 'pool4' | 'pool5'

export const ALL_POOL_LAYERS: PoolLayerName[] = ['pool3', 'pool4', 'pool5']
