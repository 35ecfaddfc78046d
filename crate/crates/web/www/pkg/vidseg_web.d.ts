/* tslint:disable */
/* eslint-disable */

/**
 * One generated sequence, kept so frames can be scrubbed without
 * regenerating.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Names of the scored classes, comma-separated.
     */
    class_names(): string;
    height(): number;
    image(t: number): Uint8Array;
    is_empty(): boolean;
    labels(t: number): Uint8Array;
    len(): number;
    constructor(seed: bigint, width: number, height: number, frames: number);
    /**
     * Per-class IoU of the sub-N round trip over every frame, in class
     * table order; NaN where a class never appears.
     */
    subn_iou(stride: number): Float64Array;
    /**
     * Labels of frame `t` after stride-`stride` subsampling and
     * nearest-neighbour upscaling.
     */
    subn_labels(t: number, stride: number): Uint8Array;
    width(): number;
}

/**
 * Relative runtime for priming periods `1..=max_period` followed by
 * priming the first frame only, over `len` frames.
 */
export function budget_curve(cost_prime: number, cost_approx: number, cost_ensemble: number, max_period: number, len: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly budget_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly scene_class_names: (a: number) => [number, number];
    readonly scene_height: (a: number) => number;
    readonly scene_image: (a: number, b: number) => [number, number];
    readonly scene_is_empty: (a: number) => number;
    readonly scene_labels: (a: number, b: number) => [number, number];
    readonly scene_len: (a: number) => number;
    readonly scene_new: (a: bigint, b: number, c: number, d: number) => [number, number, number];
    readonly scene_subn_iou: (a: number, b: number) => [number, number, number, number];
    readonly scene_subn_labels: (a: number, b: number, c: number) => [number, number, number, number];
    readonly scene_width: (a: number) => number;
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
