/* tslint:disable */
/* eslint-disable */

export function discretizeCurve(a: number, b: number, delta_max: number, points: number): Float64Array;

export function impulseResponse(a_values: Float64Array, delta: number, length: number): Float64Array;

export function parameterCount(n_features: number, embed_dim: number, state_size: number, expand: number, m_blocks: number): number;

/**
 * Returns the run as a JSON string.
 */
export function trainDemo(rows: number, informative: number, noise: number, seed: number, max_epochs: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly discretizeCurve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly impulseResponse: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly parameterCount: (a: number, b: number, c: number, d: number, e: number) => number;
    readonly trainDemo: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
