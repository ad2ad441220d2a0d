/**
 * Figure renderers. Each takes a parsed CSV table and a recipe and returns
 * a complete SVG document string; rendering is a pure function of the two.
 */

import { Table, numbers, requireColumn } from "./csv.js";
import { FigureRecipe } from "./recipe.js";
import {
  HEIGHT, MARGIN, PALETTE, WIDTH,
  circle, fmt, line, linearScale, linearTicks, logScale, logTicks,
  polyline, rect, round, svgDocument, text,
} from "./svg.js";

const PLOT_W = WIDTH - MARGIN.left - MARGIN.right;
const PLOT_H = HEIGHT - MARGIN.top - MARGIN.bottom;
const X0 = MARGIN.left;
const Y0 = MARGIN.top;

export function render(recipe: FigureRecipe, table: Table): string {
  switch (recipe.kind) {
    case "line_bw":
      return renderLines(recipe, table, false);
    case "mem_area":
      return renderLines(recipe, table, true);
    case "bars_compare":
      return renderBars(recipe, table);
  }
}

function seriesKey(row: Record<string, string>, cols: string[]): string {
  return cols.map((c) => row[c]).join("/");
}

function frame(recipe: FigureRecipe): string[] {
  const body: string[] = [];
  if (recipe.title) {
    body.push(text(WIDTH / 2, 18, recipe.title, { size: 14, anchor: "middle" }));
  }
  body.push(line(X0, Y0 + PLOT_H, X0 + PLOT_W, Y0 + PLOT_H));
  body.push(line(X0, Y0, X0, Y0 + PLOT_H));
  if (recipe.xLabel) {
    body.push(text(X0 + PLOT_W / 2, HEIGHT - 12, recipe.xLabel,
      { size: 13, anchor: "middle" }));
  }
  if (recipe.yLabel) {
    body.push(text(20, Y0 + PLOT_H / 2, recipe.yLabel,
      { size: 13, anchor: "middle", rotate: true }));
  }
  return body;
}

function legend(names: string[], colors: string[]): string[] {
  const body: string[] = [];
  let x = X0;
  let y = Y0 - 30;
  names.forEach((name, i) => {
    const width = 16 + 6.4 * name.length + 20;
    if (x + width > WIDTH - MARGIN.right && x > X0) {
      x = X0;
      y += 15;
    }
    body.push(rect(x, y - 9, 12, 12, colors[i % colors.length]));
    body.push(text(x + 16, y + 1, name, { size: 11 }));
    x += width;
  });
  return body;
}

function renderLines(recipe: FigureRecipe, table: Table, logY: boolean): string {
  const xCol = recipe.x;
  if (!xCol) throw new Error(`${table.name}: line figure needs an 'x' column`);
  const yCols = Array.isArray(recipe.y) ? recipe.y : recipe.y ? [recipe.y] : [];
  if (yCols.length === 0) throw new Error(`${table.name}: line figure needs 'y'`);
  const seriesCols = recipe.series ?? [];
  [xCol, ...yCols, ...seriesCols].forEach((c) => requireColumn(table, c));

  const xs = numbers(table, xCol);
  const allY: number[] = [];
  yCols.forEach((c) => allY.push(...numbers(table, c)));
  const refs = recipe.referenceLines ?? [];
  refs.forEach((r) => allY.push(r.value));

  const xScale = logScale(Math.min(...xs), Math.max(...xs), X0, X0 + PLOT_W);
  const useLogY = recipe.logY ?? logY;
  const yLo = useLogY ? Math.min(...allY.filter((v) => v > 0)) : 0;
  const yHi = Math.max(...allY) * 1.06;
  const yScale = useLogY
    ? logScale(yLo, yHi, Y0 + PLOT_H, Y0)
    : linearScale(yLo, yHi, Y0 + PLOT_H, Y0);

  const body = frame(recipe);
  for (const t of logTicks(Math.min(...xs), Math.max(...xs))) {
    const px = xScale(t);
    body.push(line(px, Y0 + PLOT_H, px, Y0 + PLOT_H + 5));
    body.push(text(px, Y0 + PLOT_H + 20, fmt(t), { size: 11, anchor: "middle" }));
  }
  const yTicks = useLogY ? logTicks(yLo, yHi) : linearTicks(yLo, yHi);
  for (const t of yTicks) {
    const py = yScale(t);
    body.push(line(X0 - 5, py, X0, py));
    body.push(line(X0, py, X0 + PLOT_W, py, "#dddddd", 0.7));
    body.push(text(X0 - 9, py + 4, fmt(t), { size: 11, anchor: "end" }));
  }

  // one polyline per (series columns x y column), sorted by x
  const groups = new Map<string, [number, number][]>();
  table.rows.forEach((row, i) => {
    for (const yc of yCols) {
      const key = seriesCols.length
        ? seriesKey(row, seriesCols) + (yCols.length > 1 ? ` ${yc}` : "")
        : yCols.length > 1 ? yc : "series";
      if (!groups.has(key)) groups.set(key, []);
      groups.get(key)!.push([xs[i], Number(row[yc])]);
    }
  });
  const names = [...groups.keys()];
  names.forEach((name, gi) => {
    const pts = groups.get(name)!
      .sort((a, b) => a[0] - b[0])
      .map(([x, y]) => [xScale(x), yScale(y)] as [number, number]);
    const color = PALETTE[gi % PALETTE.length];
    body.push(polyline(pts, color));
    pts.forEach(([px, py]) => body.push(circle(px, py, 2.6, color)));
  });
  body.push(...legend(names, names.map((_, i) => PALETTE[i % PALETTE.length])));

  refs.forEach((r, i) => {
    const py = yScale(r.value);
    body.push(line(X0, py, X0 + PLOT_W, py, "#444444", 1.4, "7 4"));
    body.push(text(X0 + PLOT_W - 4, py - 5, r.label,
      { size: 11, anchor: "end", fill: "#444444" }));
  });
  return svgDocument(body);
}

function renderBars(recipe: FigureRecipe, table: Table): string {
  const groupCols = recipe.group ?? [];
  const barCols = recipe.bars ?? [];
  if (groupCols.length === 0 || barCols.length === 0) {
    throw new Error(`${table.name}: bars figure needs 'group' and 'bars'`);
  }
  [...groupCols, ...barCols].forEach((c) => requireColumn(table, c));
  const values = barCols.map((c) => numbers(table, c));
  // metrics have different units: normalize each column to its peak and
  // print the actual value on top of every bar
  const maxima = values.map((v) => Math.max(...v, 1e-300));

  const body = frame(recipe);
  const nGroups = table.rows.length;
  const nBars = barCols.length;
  const groupW = PLOT_W / nGroups;
  const barW = (groupW * 0.72) / nBars;

  table.rows.forEach((row, g) => {
    const gx = X0 + g * groupW;
    barCols.forEach((c, b) => {
      const v = values[b][g];
      const h = (v / maxima[b]) * (PLOT_H - 24);
      const x = gx + groupW * 0.14 + b * barW;
      const y = Y0 + PLOT_H - h;
      body.push(rect(x, y, barW * 0.92, h, PALETTE[b % PALETTE.length]));
      body.push(text(x + barW * 0.46, y - 4, fmt(v),
        { size: 9.5, anchor: "middle", fill: "#333" }));
    });
    body.push(text(gx + groupW / 2, Y0 + PLOT_H + 18,
      seriesKey(row, groupCols), { size: 10.5, anchor: "middle" }));
  });
  body.push(...legend(barCols, barCols.map((_, i) => PALETTE[i % PALETTE.length])));
  body.push(text(X0 + PLOT_W, Y0 + PLOT_H + 36,
    "bars normalized per metric; labels show actual values",
    { size: 10, anchor: "end", fill: "#666" }));
  return svgDocument(body);
}
