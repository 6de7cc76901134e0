export { LayerSpec, VGG16_LAYERS, ALL_POOL_LAYERS, PoolLayerName } from './layers'
export { FeatureTensor, ImageMeta, encodeFeatureTensor, readFeatureFile,
         writeFeatureFile } from './vcft'
export { VIEWPOINT_BINS, ViewpointBin, azimuthToBin } from './viewpoint'
export { BBox, DatasetImage, DatasetManifest, RawKeypoint, cropScale,
         cropSize, loadDatasetManifest, toCropFrame, toOriginalFrame }
  from './dataset'
export { DecodedImage, decodePng, preprocessCrop } from './preprocess'
export { FeatureModel, buildFeatureModel, ensureBackend, extractLayers,
         loadWeightsInto } from './vgg16'
export { ExtractionJob, ExtractionResult, runExtraction } from './extract'
export { ConversionResult, ConvertedInstance, DISCARD, convertAnnotations,
         loadMergeMap, writeAnnotationFile } from './convert'
