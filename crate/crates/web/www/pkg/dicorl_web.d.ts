/* tslint:disable */
/* eslint-disable */

/**
 * A Medium1 then Random1 chain run trained a few steps at a time.
 */
export class ChainDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Trains up to `n` gradient steps; returns `false` once both datasets
     * are done.
     */
    advance(n: number): boolean;
    /**
     * Mean return of the policy's mode over a few fixed-seed episodes.
     */
    evalReturn(episodes: number): number;
    /**
     * Whether the critic's greedy action at the start state is `right`.
     */
    greedyIsRight(): boolean;
    /**
     * `algorithm` is one of `cql`, `cql+er`, `iql`, `iql+er`, `eiql`, `ereiql`.
     */
    constructor(algorithm: string, ensemble: number, tau: number, hidden: number, steps_per_dataset: number, seed: bigint);
    /**
     * Zero-based index of the dataset being trained (2 when finished).
     */
    stage(): number;
    /**
     * Critic values of left, stay and right at the start state.
     */
    startQ(): Float64Array;
    steps(): number;
}

export function expectileLossCurve(samples: Float64Array, tau: number, lo: number, hi: number, n: number): Float64Array;

export function expectileOf(samples: Float64Array, tau: number): number;

export function pessimismCurve(sizes: Uint32Array, hidden: Uint32Array, seeds: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_chaindemo_free: (a: number, b: number) => void;
    readonly chaindemo_advance: (a: number, b: number) => [number, number, number];
    readonly chaindemo_evalReturn: (a: number, b: number) => [number, number, number];
    readonly chaindemo_greedyIsRight: (a: number) => [number, number, number];
    readonly chaindemo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly chaindemo_stage: (a: number) => number;
    readonly chaindemo_startQ: (a: number) => [number, number, number, number];
    readonly chaindemo_steps: (a: number) => number;
    readonly expectileLossCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly expectileOf: (a: number, b: number, c: number) => number;
    readonly pessimismCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
