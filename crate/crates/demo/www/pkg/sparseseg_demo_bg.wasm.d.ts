/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_lab_free: (a: number, b: number) => void;
export const lab_annotate: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const lab_classes: (a: number) => [number, number];
export const lab_clt: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number, number];
export const lab_downsample: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const lab_is_empty: (a: number) => number;
export const lab_len: (a: number) => number;
export const lab_new: (a: number, b: bigint) => [number, number, number];
export const lab_num_classes: (a: number) => number;
export const lab_xy: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
