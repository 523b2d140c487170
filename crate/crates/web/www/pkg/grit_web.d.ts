/* tslint:disable */
/* eslint-disable */

export class Grounding {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    rgba(): Uint8Array;
    readonly gtCount: number;
    readonly height: number;
    readonly iou: number;
    readonly predCount: number;
    readonly width: number;
}

export function groundingOverlay(pred_text: string, gt_text: string, width: number, height: number): Grounding;

/**
 * JSON breakdown of a trace. A negative `gt_count` means no count.
 */
export function scoreTrace(text: string, gt_answer: string, gt_count: number, counting: boolean): string;

export function surrogateCurve(rewards: Float64Array, epsilon: number, points: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_grounding_free: (a: number, b: number) => void;
    readonly groundingOverlay: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly grounding_gtCount: (a: number) => number;
    readonly grounding_height: (a: number) => number;
    readonly grounding_iou: (a: number) => number;
    readonly grounding_predCount: (a: number) => number;
    readonly grounding_rgba: (a: number) => [number, number];
    readonly grounding_width: (a: number) => number;
    readonly scoreTrace: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly surrogateCurve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
