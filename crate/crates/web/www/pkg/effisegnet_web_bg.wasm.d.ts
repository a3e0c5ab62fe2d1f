/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_thresholdview_free: (a: number, b: number) => void;
export const augment_preview: (a: bigint, b: bigint, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const default_augmentation_json: () => [number, number];
export const lr_curve: (a: number, b: number, c: number) => [number, number, number, number];
export const threshold_view: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number];
export const thresholdview_metrics_json: (a: number) => [number, number];
export const thresholdview_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
