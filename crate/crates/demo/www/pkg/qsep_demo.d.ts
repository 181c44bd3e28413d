/* tslint:disable */
/* eslint-disable */

/**
 * Runs the certifier on a state file and returns the certificate JSON.
 */
export function certify(state: string, symmetric: boolean, seed: bigint, k_max?: number | null): string;

/**
 * State file text for one of the built-in examples.
 */
export function preset(name: string): string;

/**
 * Certifies one member of [`symmetric_family`] in symmetric mode and
 * returns `{p, verdict, r, k, levels}`.
 */
export function scan_point(p: number, seed: bigint): string;

/**
 * Re-checks a certificate against a state. Returns `{ok, value | reason}`.
 */
export function verify(certificate: string, state: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly certify: (a: number, b: number, c: number, d: bigint, e: number) => [number, number, number, number];
    readonly preset: (a: number, b: number) => [number, number, number, number];
    readonly scan_point: (a: number, b: bigint) => [number, number, number, number];
    readonly verify: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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
