/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_model_free: (a: number, b: number) => void;
export const __wbg_page_free: (a: number, b: number) => void;
export const __wbg_scores_free: (a: number, b: number) => void;
export const model_attention: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const model_attention_window: (a: number, b: number) => [number, number, number, number];
export const model_describe: (a: number) => [number, number];
export const model_enhance: (a: number, b: number) => [number, number, number, number];
export const model_from_checkpoint: (a: number, b: number) => [number, number, number];
export const model_grid: (a: number) => number;
export const model_heads: (a: number) => number;
export const model_layers: (a: number) => number;
export const model_random: (a: number) => [number, number, number];
export const model_score: (a: number, b: number, c: number) => [number, number, number];
export const model_window: (a: number) => number;
export const page_clean_rgba: (a: number) => [number, number];
export const page_degraded_rgba: (a: number) => [number, number];
export const page_height: (a: number) => number;
export const page_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const page_score_threshold: (a: number, b: number) => [number, number, number];
export const page_threshold_rgba: (a: number, b: number) => [number, number];
export const page_width: (a: number) => number;
export const scores_drd: (a: number) => number;
export const scores_fm: (a: number) => number;
export const scores_fps: (a: number) => number;
export const scores_psnr: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
