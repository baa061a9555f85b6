/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_picturescatter_free: (a: number, b: number) => void;
export const picture_scatter: (a: number, b: number) => [number, number, number];
export const picturescatter_pictures: (a: number) => [number, number];
export const picturescatter_silhouette: (a: number) => number;
export const picturescatter_xy: (a: number) => [number, number];
export const poe_fuse_probs: (a: number, b: number) => number;
export const supcon_curve: (a: number, b: number, c: number, d: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
