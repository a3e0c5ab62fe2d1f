/* tslint:disable */
/* eslint-disable */

export class ThresholdView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Metric report as JSON (`f1`, `mdice`, `miou`, `precision`, `recall`, counts).
     */
    readonly metrics_json: string;
    /**
     * `size × size` RGBA overlay.
     */
    readonly rgba: Uint8Array;
}

/**
 * `2·size × size` RGBA bytes (original | augmented).
 */
export function augment_preview(sample_seed: bigint, aug_seed: bigint, epoch: number, size: number, config_json: string): Uint8Array;

export function default_augmentation_json(): string;

/**
 * Learning rate per epoch `0..=epochs` as a `Float64Array`.
 */
export function lr_curve(epochs: number, lr_initial: number, lr_final: number): Float64Array;

export function threshold_view(seed: bigint, size: number, blur: number, noise: number, threshold: number): ThresholdView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_thresholdview_free: (a: number, b: number) => void;
    readonly augment_preview: (a: bigint, b: bigint, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly default_augmentation_json: () => [number, number];
    readonly lr_curve: (a: number, b: number, c: number) => [number, number, number, number];
    readonly threshold_view: (a: bigint, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly thresholdview_metrics_json: (a: number) => [number, number];
    readonly thresholdview_rgba: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
