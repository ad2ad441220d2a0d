/**
 * Figure recipes: which CSV to read, which figure kind to draw, and the
 * axis/series/reference-line dressing.
 */

import { readFileSync } from "fs";

export type FigureKind = "line_bw" | "bars_compare" | "mem_area";

export interface ReferenceLine {
  label: string;
  value: number;
}

export interface FigureRecipe {
  kind: FigureKind;
  input: string; // CSV path, relative to the recipe file
  title?: string;
  xLabel?: string;
  yLabel?: string;
  /** line_bw / mem_area: numeric x column (log scale) */
  x?: string;
  /** line_bw: numeric y column; mem_area: one line per y column */
  y?: string | string[];
  /** columns whose joined values name a series */
  series?: string[];
  /** bars_compare: key columns labelling each bar group */
  group?: string[];
  /** bars_compare: numeric columns, one bar per group and column */
  bars?: string[];
  referenceLines?: ReferenceLine[];
  logY?: boolean;
}

const KINDS: FigureKind[] = ["line_bw", "bars_compare", "mem_area"];

export function loadRecipe(path: string): FigureRecipe {
  const raw = JSON.parse(readFileSync(path, "utf-8")) as FigureRecipe;
  if (!KINDS.includes(raw.kind)) {
    throw new Error(`${path}: unknown figure kind '${raw.kind}'`);
  }
  if (!raw.input) {
    throw new Error(`${path}: recipe is missing its input CSV path`);
  }
  return raw;
}
