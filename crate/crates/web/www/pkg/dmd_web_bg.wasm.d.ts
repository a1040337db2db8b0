/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const hawkesLosses: (a: number, b: number, c: number) => [number, number, number, number];
export const textureLosses: (a: number, b: number, c: number) => [number, number, number, number];
export const videoModels: () => number;
export const videoWeights: (a: number, b: number, c: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
