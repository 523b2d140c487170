/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_grounding_free: (a: number, b: number) => void;
export const groundingOverlay: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const grounding_gtCount: (a: number) => number;
export const grounding_height: (a: number) => number;
export const grounding_iou: (a: number) => number;
export const grounding_predCount: (a: number) => number;
export const grounding_rgba: (a: number) => [number, number];
export const grounding_width: (a: number) => number;
export const scoreTrace: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const surrogateCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
