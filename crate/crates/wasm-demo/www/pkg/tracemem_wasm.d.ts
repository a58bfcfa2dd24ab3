/* tslint:disable */
/* eslint-disable */

export class MemoryDemo {
    free(): void;
    [Symbol.dispose](): void;
    compare(query: string): string;
    /**
     * `Speaker: text` lines, one turn per line.
     */
    ingest(transcript: string): string;
    constructor();
    query(query: string, uniform: boolean): string;
    stats(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_memorydemo_free: (a: number, b: number) => void;
    readonly memorydemo_compare: (a: number, b: number, c: number) => [number, number, number, number];
    readonly memorydemo_ingest: (a: number, b: number, c: number) => [number, number, number, number];
    readonly memorydemo_new: () => number;
    readonly memorydemo_query: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly memorydemo_stats: (a: number) => [number, number, number, number];
    readonly __externref_table_alloc: () => number;
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
