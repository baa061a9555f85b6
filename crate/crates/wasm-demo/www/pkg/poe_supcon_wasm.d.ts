/* tslint:disable */
/* eslint-disable */

/**
 * Synthetic text embeddings projected on their two leading principal axes.
 */
export class PictureScatter {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    pictures(): Uint8Array;
    /**
     * Mean silhouette of picture clusters in the full embedding space.
     */
    silhouette(): number;
    /**
     * Interleaved x, y coordinates.
     */
    xy(): Float64Array;
}

export function picture_scatter(strength: number, seed: number): PictureScatter;

/**
 * Fused P(MCI) from each expert's P(MCI).
 */
export function poe_fuse_probs(p_mci: Float64Array): number;

/**
 * Contrastive loss of a four-sample batch on the unit circle, two samples
 * per picture. Each pair is `spread_deg` wide; the second pair's centre
 * sweeps from 0° to 180° away from the first over `points` steps.
 */
export function supcon_curve(spread_deg: number, tau: number, literal: boolean, points: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_picturescatter_free: (a: number, b: number) => void;
    readonly picture_scatter: (a: number, b: number) => [number, number, number];
    readonly picturescatter_pictures: (a: number) => [number, number];
    readonly picturescatter_silhouette: (a: number) => number;
    readonly picturescatter_xy: (a: number) => [number, number];
    readonly poe_fuse_probs: (a: number, b: number) => number;
    readonly supcon_curve: (a: number, b: number, c: number, d: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
