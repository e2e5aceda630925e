/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Boundary loss before and after the last stitching run.
     */
    boundary_loss(): Float64Array;
    direction_names(): string[];
    /**
     * Edit the current face and return the edited image as RGBA.
     */
    edit(direction: string, strength: number, dilation: number): Uint8Array;
    face_area(): number;
    /**
     * Face mask in white, the boundary band in orange.
     */
    mask_overlay(): Uint8Array;
    /**
     * The edit pasted inside its mask, without tuning.
     */
    naive(): Uint8Array;
    /**
     * Boundary loss of the untuned edit against the original.
     */
    naive_boundary_loss(): number;
    constructor(seed: number);
    /**
     * Draw a random face and return it as RGBA.
     */
    sample(face_seed: number): Uint8Array;
    size(): number;
    /**
     * Tune the generator to blend the boundary, then composite through the
     * dilated mask.
     */
    stitch(iterations: number, feather: number): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_boundary_loss: (a: number) => [number, number];
    readonly demo_direction_names: (a: number) => [number, number];
    readonly demo_edit: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly demo_face_area: (a: number) => [number, number, number];
    readonly demo_mask_overlay: (a: number) => [number, number, number, number];
    readonly demo_naive: (a: number) => [number, number, number, number];
    readonly demo_naive_boundary_loss: (a: number) => [number, number, number];
    readonly demo_new: (a: number) => [number, number, number];
    readonly demo_sample: (a: number, b: number) => [number, number, number, number];
    readonly demo_size: (a: number) => number;
    readonly demo_stitch: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
