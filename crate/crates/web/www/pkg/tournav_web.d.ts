/* tslint:disable */
/* eslint-disable */

/**
 * A generated world with its tour, graph and localization map.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Renders a view at the given pose and localizes it against the tour.
     */
    localize(x: number, y: number, theta: number, noise: number, seed: number): string;
    /**
     * Finds the goal frame for `instruction` and drives there from the start
     * pose. `noise` in [0, 1] scales every noise source together.
     */
    navigate(instruction: string, x: number, y: number, theta: number, noise: number, seed: number): string;
    /**
     * Generates the default office world and a patrol tour of `frames` frames.
     */
    constructor(seed: number, frames: number);
    /**
     * Walls, landmarks, tour poses and the instruction list.
     */
    scene(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_localize: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly demo_navigate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_scene: (a: number) => [number, number];
    readonly __externref_table_alloc: () => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
