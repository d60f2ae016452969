/* tslint:disable */
/* eslint-disable */

/**
 * A model for enhancement and attention maps, random or from a checkpoint.
 */
export class Model {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Attention of `token` over the top-left window of the page, as an S×S heat map.
     */
    attention(page: Page, layer: number, head: number, token: number): Uint8Array;
    /**
     * The window the attention maps are computed on, as RGBA.
     */
    attention_window(page: Page): Uint8Array;
    describe(): string;
    /**
     * Model output for the whole page as grayscale RGBA.
     */
    enhance(page: Page): Uint8Array;
    static from_checkpoint(bytes: Uint8Array): Model;
    static random(seed: number): Model;
    /**
     * Scores the thresholded model output against the clean page.
     */
    score(page: Page, threshold: number): Scores;
    /**
     * Token grid side within one window.
     */
    readonly grid: number;
    readonly heads: number;
    readonly layers: number;
    readonly window: number;
}

/**
 * A synthetic degraded page with its clean ground truth.
 */
export class Page {
    free(): void;
    [Symbol.dispose](): void;
    clean_rgba(): Uint8Array;
    degraded_rgba(): Uint8Array;
    constructor(height: number, width: number, seed: number, stain: number, saltpepper: number, blur: number, bleed: number, density: number);
    /**
     * Scores a global threshold of the degraded page against the clean page.
     */
    score_threshold(threshold: number): Scores;
    /**
     * Global threshold on the degraded page: pixels at or below become ink.
     */
    threshold_rgba(threshold: number): Uint8Array;
    readonly height: number;
    readonly width: number;
}

export class Scores {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly drd: number;
    readonly fm: number;
    readonly fps: number;
    readonly psnr: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_model_free: (a: number, b: number) => void;
    readonly __wbg_page_free: (a: number, b: number) => void;
    readonly __wbg_scores_free: (a: number, b: number) => void;
    readonly model_attention: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly model_attention_window: (a: number, b: number) => [number, number, number, number];
    readonly model_describe: (a: number) => [number, number];
    readonly model_enhance: (a: number, b: number) => [number, number, number, number];
    readonly model_from_checkpoint: (a: number, b: number) => [number, number, number];
    readonly model_grid: (a: number) => number;
    readonly model_heads: (a: number) => number;
    readonly model_layers: (a: number) => number;
    readonly model_random: (a: number) => [number, number, number];
    readonly model_score: (a: number, b: number, c: number) => [number, number, number];
    readonly model_window: (a: number) => number;
    readonly page_clean_rgba: (a: number) => [number, number];
    readonly page_degraded_rgba: (a: number) => [number, number];
    readonly page_height: (a: number) => number;
    readonly page_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly page_score_threshold: (a: number, b: number) => [number, number, number];
    readonly page_threshold_rgba: (a: number, b: number) => [number, number];
    readonly page_width: (a: number) => number;
    readonly scores_drd: (a: number) => number;
    readonly scores_fm: (a: number) => number;
    readonly scores_fps: (a: number) => number;
    readonly scores_psnr: (a: number) => number;
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
