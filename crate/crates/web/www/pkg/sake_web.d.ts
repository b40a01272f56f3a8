/* tslint:disable */
/* eslint-disable */

/**
 * Names of all shape classes, indexed by class id.
 */
export function class_names(): string[];

/**
 * Class ids the teacher is trained on, in head order.
 */
export function original_classes(): Uint32Array;

/**
 * RGBA pixels (side x side) of one generated photo or sketch.
 */
export function render(class_id: number, sketch: boolean, sample_id: number, side: number, seed: bigint): Uint8Array;

/**
 * Taxonomy path similarity of `class_id` to each original class.
 */
export function similarity_row(class_id: number): Float64Array;

/**
 * softmax(λ₁·t + λ₂·a) over the original classes.
 */
export function teacher_signal(class_id: number, teacher_logits: Float64Array, lambda1: number, lambda2: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly class_names: () => [number, number];
    readonly original_classes: () => [number, number];
    readonly render: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly similarity_row: (a: number) => [number, number, number, number];
    readonly teacher_signal: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
