/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const distort_dialogue: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const feature_heatmap: (a: number, b: number, c: bigint) => [number, number];
export const sample_corpus: () => [number, number];
export const train_tiny: (a: number, b: number, c: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
