/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const budget_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const scene_class_names: (a: number) => [number, number];
export const scene_height: (a: number) => number;
export const scene_image: (a: number, b: number) => [number, number];
export const scene_is_empty: (a: number) => number;
export const scene_labels: (a: number, b: number) => [number, number];
export const scene_len: (a: number) => number;
export const scene_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
export const scene_subn_iou: (a: number, b: number) => [number, number, number, number];
export const scene_subn_labels: (a: number, b: number, c: number) => [number, number, number, number];
export const scene_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
