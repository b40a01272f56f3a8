/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const class_names: () => [number, number];
export const original_classes: () => [number, number];
export const render: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const similarity_row: (a: number) => [number, number, number, number];
export const teacher_signal: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
