/* tslint:disable */
/* eslint-disable */

/**
 * One synthetic clip held in memory.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    frame_rgba(t: number): Uint8Array;
    is_empty(): boolean;
    len(): number;
    /**
     * Clip `index` of a small seeded set at `resolution` x `resolution`.
     */
    constructor(seed: number, index: number, resolution: number, frames: number);
    /**
     * Residual of frame `t` against its neighbour, `min(alpha |diff|, beta)`.
     */
    residual_rgba(t: number, alpha: number, beta: number): Uint8Array;
    resolution(): number;
    /**
     * `smoke`, `steam`, `box` or `static`.
     */
    readonly kind: string;
    readonly source_id: string;
}

/**
 * One frame index per segment; `seed` 0 picks segment centres.
 */
export function sample_segments(len: number, n_segments: number, seed: number): Uint32Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly sample_segments: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_frame_rgba: (a: number, b: number) => [number, number, number, number];
    readonly scene_is_empty: (a: number) => number;
    readonly scene_kind: (a: number) => [number, number];
    readonly scene_len: (a: number) => number;
    readonly scene_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly scene_residual_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly scene_resolution: (a: number) => number;
    readonly scene_source_id: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
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
