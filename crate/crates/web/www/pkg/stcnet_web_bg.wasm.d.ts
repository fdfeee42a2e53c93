/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const sample_segments: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_frame_rgba: (a: number, b: number) => [number, number, number, number];
export const scene_is_empty: (a: number) => number;
export const scene_kind: (a: number) => [number, number];
export const scene_len: (a: number) => number;
export const scene_new: (a: number, b: number, c: number, d: number) => [number, number, number];
export const scene_residual_rgba: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const scene_resolution: (a: number) => number;
export const scene_source_id: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
