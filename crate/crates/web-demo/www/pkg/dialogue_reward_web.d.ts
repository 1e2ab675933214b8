/* tslint:disable */
/* eslint-disable */

/**
 * Replaces the first `noise` B-sentences of dialogue `index` in `corpus`.
 */
export function distort_dialogue(corpus: string, index: number, noise: number, seed: bigint): string;

/**
 * Feature matrix (`history` rows of sentence vectors) for one synthetic
 * dialogue at noise level `noise`.
 */
export function feature_heatmap(history: number, noise: number, seed: bigint): string;

export function sample_corpus(): string;

/**
 * Trains a small regressor on synthetic scored dialogues and returns the
 * learning curve, test correlation and a jittered scatter.
 */
export function train_tiny(history: number, epochs: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly distort_dialogue: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
    readonly feature_heatmap: (a: number, b: number, c: bigint) => [number, number];
    readonly sample_corpus: () => [number, number];
    readonly train_tiny: (a: number, b: number, c: bigint) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
