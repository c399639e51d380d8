/**
 * Stateless TypeScript client for the kernelgp Gaussian-process CLI.
 *
 * Every operation shells out to the core command-line tool and exchanges
 * data through its documented wire formats (headerless CSV matrices, JSON
 * model files, `key value` eval output). No numeric computation happens on
 * this side of the boundary: numbers are printed by the core at 17
 * significant digits and parsed back verbatim, so results are byte-identical
 * to direct core calls.
 *
 * The core binary defaults to `python3 -m kernelgp`; override with the
 * KERNELGP_CLI environment variable (e.g. `KERNELGP_CLI=kernelgp`).
 */

import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

export const BINDING_VERSION = "1.0.0";

export type KernelType = "gaussian" | "matern32" | "matern52";

export interface Hyperparams {
  l: number;
  f: number;
  s: number;
}

/** Unconstrained parameters; the core maps them through softplus. */
export interface RawParams {
  rhoL: number;
  rhoF: number;
  rhoS: number;
}

export interface LossGrad {
  loss: number;
  gradRhoL: number;
  gradRhoF: number;
  gradRhoS: number;
  /** The softplus-mapped hyperparameters, as reported by the core. */
  params: Hyperparams;
}

export interface Prediction {
  predictionMean: Float64Array;
  predictionStddev: Float64Array;
}

export interface SolverOptions {
  mode?: "exact" | "iterative";
  probes?: number;
  tol?: number;
  probeTol?: number;
  maxIter?: number;
  precondRank?: number;
  blockSize?: number;
  seed?: number;
  threads?: number;
  /** Reject concurrent use of one handle instead of corrupting state. */
  debugLock?: boolean;
}

/** Row-major numeric matrix: nested rows or a flat buffer with dimensions. */
export type MatrixLike =
  | number[][]
  | { values: ArrayLike<number>; rows: number; cols: number };

/** The core process failed; carries its exit code and stderr message. */
export class CoreError extends Error {
  constructor(readonly exitCode: number | null, message: string) {
    super(message);
    this.name = "CoreError";
  }
}

export class HandleReleasedError extends Error {
  constructor() {
    super("this problem handle has been released");
    this.name = "HandleReleasedError";
  }
}

function toRows(m: MatrixLike, name: string): number[][] {
  if (Array.isArray(m)) {
    if (m.length === 0 || !Array.isArray(m[0]) || m[0].length === 0) {
      throw new Error(`${name} must be a nonempty 2-d matrix`);
    }
    const cols = m[0].length;
    for (const row of m) {
      if (row.length !== cols) {
        throw new Error(`${name} rows disagree on length`);
      }
    }
    return m;
  }
  const { values, rows, cols } = m;
  if (rows < 1 || cols < 1 || values.length !== rows * cols) {
    throw new Error(`${name}: flat buffer of ${values.length} does not match ${rows}x${cols}`);
  }
  const out: number[][] = [];
  for (let i = 0; i < rows; i++) {
    const row: number[] = [];
    for (let j = 0; j < cols; j++) row.push(Number(values[i * cols + j]));
    out.push(row);
  }
  return out;
}

function assertFinite(rows: number[][], name: string): void {
  for (const row of rows) {
    for (const v of row) {
      if (!Number.isFinite(v)) throw new Error(`${name} contains a non-finite value`);
    }
  }
}

/** JS number-to-string is shortest-round-trip, so the core reparses exactly. */
function writeCsv(path: string, rows: number[][]): void {
  writeFileSync(path, rows.map((r) => r.join(",")).join("\n") + "\n");
}

function runCli(args: string[]): string {
  const cmd = (process.env.KERNELGP_CLI ?? "python3 -m kernelgp").split(" ");
  const res = spawnSync(cmd[0], [...cmd.slice(1), ...args], {
    encoding: "utf8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (res.error) throw res.error;
  if (res.status !== 0) {
    throw new CoreError(res.status, (res.stderr || "core invocation failed").trim());
  }
  return res.stdout;
}

function parseKeyValues(stdout: string): Map<string, number> {
  const out = new Map<string, number>();
  for (const line of stdout.split("\n")) {
    const parts = line.trim().split(/\s+/);
    if (parts.length === 2) out.set(parts[0], Number(parts[1]));
  }
  return out;
}

function solverArgs(options: SolverOptions): string[] {
  const args: string[] = [];
  if (options.mode) args.push("--mode", options.mode);
  if (options.probes !== undefined) args.push("--probes", String(options.probes));
  if (options.tol !== undefined) args.push("--tol", String(options.tol));
  if (options.probeTol !== undefined) args.push("--probe-tol", String(options.probeTol));
  if (options.maxIter !== undefined) args.push("--max-iter", String(options.maxIter));
  if (options.precondRank !== undefined) args.push("--precond-rank", String(options.precondRank));
  if (options.blockSize !== undefined) args.push("--block-size", String(options.blockSize));
  if (options.seed !== undefined) args.push("--seed", String(options.seed));
  if (options.threads !== undefined) args.push("--threads", String(options.threads));
  return args;
}

/**
 * Owns a copy of one training set on disk plus solver configuration.
 * Reads are side-effect free; the handle stays valid until release().
 */
export class GprProblemHandle {
  private dir: string | null;
  private busy = false;

  constructor(
    readonly kernelType: KernelType,
    readonly n: number,
    readonly d: number,
    readonly options: SolverOptions,
    dir: string,
  ) {
    this.dir = dir;
  }

  get released(): boolean {
    return this.dir === null;
  }

  /**
   * Free the on-disk copy. Releasing twice is a reported no-op (returns
   * false), never a crash.
   */
  release(): boolean {
    if (this.dir === null) return false;
    rmSync(this.dir, { recursive: true, force: true });
    this.dir = null;
    return true;
  }

  /** @internal */
  withData<T>(fn: (dataPath: string, labelsPath: string) => T): T {
    if (this.dir === null) throw new HandleReleasedError();
    if (this.options.debugLock && this.busy) {
      throw new Error("handle is already in use (debugLock)");
    }
    this.busy = true;
    try {
      return fn(join(this.dir, "data.csv"), join(this.dir, "labels.csv"));
    } finally {
      this.busy = false;
    }
  }
}

/**
 * Copy a training set across the boundary and return a problem handle.
 * The caller's arrays are never aliased; mutating them afterwards has no
 * effect on the handle.
 */
export function setup(args: {
  data: MatrixLike;
  label: ArrayLike<number>;
  kernelType: KernelType;
  options?: SolverOptions;
}): GprProblemHandle {
  const rows = toRows(args.data, "data");
  assertFinite(rows, "data");
  const label = Array.from(args.label, Number);
  if (label.length !== rows.length) {
    throw new Error(
      `label count ${label.length} does not match ${rows.length} data rows`,
    );
  }
  const dir = mkdtempSync(join(tmpdir(), "kernelgp-"));
  writeCsv(join(dir, "data.csv"), rows);
  writeCsv(join(dir, "labels.csv"), label.map((v) => [v]));
  return new GprProblemHandle(
    args.kernelType,
    rows.length,
    rows[0].length,
    args.options ?? {},
    dir,
  );
}

/**
 * Loss and gradient at unconstrained parameters, gradients already pulled
 * back to the raw space so any host optimizer can consume them directly.
 */
export function calcLossGrad(
  handle: GprProblemHandle,
  raw: RawParams,
): LossGrad {
  return handle.withData((dataPath, labelsPath) => {
    const stdout = runCli([
      "eval",
      "--raw-params",
      `${raw.rhoL},${raw.rhoF},${raw.rhoS}`,
      "--kernel",
      handle.kernelType,
      "--data",
      dataPath,
      "--labels",
      labelsPath,
      "--grad",
      ...solverArgs(handle.options),
    ]);
    const kv = parseKeyValues(stdout);
    for (const key of ["loss", "grad_rho_l", "grad_rho_f", "grad_rho_s", "l", "f", "s"]) {
      if (!kv.has(key)) throw new CoreError(0, `core output missing ${key}`);
    }
    return {
      loss: kv.get("loss")!,
      gradRhoL: kv.get("grad_rho_l")!,
      gradRhoF: kv.get("grad_rho_f")!,
      gradRhoS: kv.get("grad_rho_s")!,
      params: { l: kv.get("l")!, f: kv.get("f")!, s: kv.get("s")! },
    };
  });
}

/**
 * Stateless prediction: training data is re-supplied on every call, nothing
 * persists between calls.
 */
export function gprPrediction(
  trainX: MatrixLike,
  trainY: ArrayLike<number>,
  testX: MatrixLike,
  kernelType: KernelType,
  params: Hyperparams,
  options: SolverOptions = {},
): Prediction {
  const train = toRows(trainX, "trainX");
  assertFinite(train, "trainX");
  const label = Array.from(trainY, Number);
  if (label.length !== train.length) {
    throw new Error(`label count ${label.length} does not match ${train.length} data rows`);
  }
  let test: number[][] = [];
  if (Array.isArray(testX) ? testX.length > 0 : testX.values.length > 0) {
    test = toRows(testX, "testX");
    assertFinite(test, "testX");
  }

  const dir = mkdtempSync(join(tmpdir(), "kernelgp-"));
  try {
    writeCsv(join(dir, "train.csv"), train);
    writeCsv(join(dir, "labels.csv"), label.map((v) => [v]));
    writeCsv(join(dir, "test.csv"), test);
    writeFileSync(
      join(dir, "model.json"),
      JSON.stringify({
        format_version: 1,
        kernel: kernelType,
        l: params.l,
        f: params.f,
        s: params.s,
      }),
    );
    runCli([
      "predict",
      "--model", join(dir, "model.json"),
      "--data", join(dir, "train.csv"),
      "--labels", join(dir, "labels.csv"),
      "--test", join(dir, "test.csv"),
      "--out", join(dir, "pred.csv"),
      ...solverArgs(options),
    ]);
    const lines = readFileSync(join(dir, "pred.csv"), "utf8").trim().split("\n");
    const mean = new Float64Array(lines.length - 1);
    const stddev = new Float64Array(lines.length - 1);
    for (let i = 1; i < lines.length; i++) {
      const [m, sd] = lines[i].split(",");
      mean[i - 1] = Number(m);
      stddev[i - 1] = Number(sd);
    }
    return { predictionMean: mean, predictionStddev: stddev };
  } finally {
    rmSync(dir, { recursive: true, force: true });
  }
}

/**
 * Convenience wrapper holding raw parameters for an optimization loop:
 * `calcLossGrad()` refreshes loss, gradients, and the mapped
 * hyperparameters in one core call. The optimizer itself is left to the
 * host ecosystem.
 */
export class GPRModel {
  raw: RawParams;
  private last: LossGrad | null = null;

  constructor(
    readonly problem: GprProblemHandle,
    initial: RawParams = { rhoL: 0, rhoF: 0, rhoS: 0 },
  ) {
    this.raw = { ...initial };
  }

  calcLossGrad(): number {
    this.last = calcLossGrad(this.problem, this.raw);
    return this.last.loss;
  }

  /** Gradient in raw space from the most recent calcLossGrad(). */
  getGrads(): [number, number, number] {
    if (this.last === null) this.calcLossGrad();
    return [this.last!.gradRhoL, this.last!.gradRhoF, this.last!.gradRhoS];
  }

  /** Mapped hyperparameters from the most recent calcLossGrad(). */
  getParams(): Hyperparams {
    if (this.last === null) this.calcLossGrad();
    return { ...this.last!.params };
  }
}

export function version(): { binding: string; core: string } {
  return { binding: BINDING_VERSION, core: process.env.KERNELGP_CLI ?? "python3 -m kernelgp" };
}
