/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_chaindemo_free: (a: number, b: number) => void;
export const chaindemo_advance: (a: number, b: number) => [number, number, number];
export const chaindemo_evalReturn: (a: number, b: number) => [number, number, number];
export const chaindemo_greedyIsRight: (a: number) => [number, number, number];
export const chaindemo_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const chaindemo_stage: (a: number) => number;
export const chaindemo_startQ: (a: number) => [number, number, number, number];
export const chaindemo_steps: (a: number) => number;
export const expectileLossCurve: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const expectileOf: (a: number, b: number, c: number) => number;
export const pessimismCurve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
