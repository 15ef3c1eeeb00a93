/* tslint:disable */
/* eslint-disable */

export class Lab {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Labels `rate·N` points in `clusters` feature-space clusters (0 means
     * uniform). Returns the labelled indices and keeps them for `downsample`.
     */
    annotate(rate: number, clusters: number, seed: bigint): Uint32Array;
    classes(): Uint32Array;
    /**
     * Repeats `repeats` draws of `m` points and returns, per parameter
     * component, `(mean deviation, se, analytic bias)` interleaved.
     * `corner_decay = 0` draws uniformly.
     */
    clt(corner_decay: number, calibration: string, m: number, repeats: number, seed: bigint): Float64Array;
    /**
     * Keeps one point in each of `⌈|V|/4⌉` voxels. Returns the kept indices.
     */
    downsample(strategy: string, voxel_size: number, seed: bigint): Uint32Array;
    is_empty(): boolean;
    len(): number;
    constructor(points: number, seed: bigint);
    num_classes(): number;
    /**
     * Interleaved `x, y` (top-down view).
     */
    xy(): Float64Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_lab_free: (a: number, b: number) => void;
    readonly lab_annotate: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly lab_classes: (a: number) => [number, number];
    readonly lab_clt: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
    readonly lab_downsample: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly lab_is_empty: (a: number) => number;
    readonly lab_len: (a: number) => number;
    readonly lab_new: (a: number, b: bigint) => [number, number, number];
    readonly lab_num_classes: (a: number) => number;
    readonly lab_xy: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
