/**
 * Hand-rolled SVG primitives: fixed canvas, fixed palette, no timestamps
 * or randomness, so repeated renders are byte-identical.
 */

export const WIDTH = 760;
export const HEIGHT = 440;
export const MARGIN = { top: 64, right: 32, bottom: 56, left: 84 };

export const PALETTE = [
  "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
  "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2",
];

export interface Scale {
  (v: number): number;
}

export function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

export function logScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const l0 = Math.log10(d0);
  const span = Math.log10(d1) - l0 || 1;
  return (v) => r0 + ((Math.log10(v) - l0) / span) * (r1 - r0);
}

export function linearTicks(lo: number, hi: number, n = 6): number[] {
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / n)));
  const err = span / n / step;
  const mul = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const s = step * mul;
  const start = Math.ceil(lo / s) * s;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-9; v += s) out.push(Number(v.toPrecision(12)));
  return out;
}

export function logTicks(lo: number, hi: number): number[] {
  const out: number[] = [];
  for (let e = Math.floor(Math.log10(lo)); e <= Math.ceil(Math.log10(hi)); e++) {
    const v = Math.pow(10, e);
    if (v >= lo / 1.0001 && v <= hi * 1.0001) out.push(v);
  }
  return out.length >= 2 ? out : [lo, hi];
}

export function fmt(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 1024 && Number.isInteger(v) && v % 1024 === 0 && a < 1e9) {
    return a >= 1024 * 1024 ? `${trim(v / (1024 * 1024))}Mi` : `${trim(v / 1024)}Ki`;
  }
  if (a >= 1e12) return `${trim(v / 1e12)}T`;
  if (a >= 1e9) return `${trim(v / 1e9)}G`;
  if (a >= 1e6) return `${trim(v / 1e6)}M`;
  if (a >= 1e3) return `${trim(v / 1e3)}k`;
  if (a < 0.01) return v.toExponential(1);
  return trim(v);
}

function trim(v: number): string {
  return Number(v.toPrecision(4)).toString();
}

export function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function text(
  x: number, y: number, s: string,
  opts: { size?: number; anchor?: string; fill?: string; rotate?: boolean } = {},
): string {
  const size = opts.size ?? 12;
  const anchor = opts.anchor ?? "start";
  const fill = opts.fill ?? "#222";
  const transform = opts.rotate ? ` transform="rotate(-90 ${x} ${y})"` : "";
  return `<text x="${x}" y="${y}" font-size="${size}" text-anchor="${anchor}" ` +
    `fill="${fill}" font-family="sans-serif"${transform}>${esc(s)}</text>`;
}

export function line(
  x1: number, y1: number, x2: number, y2: number,
  stroke = "#222", width = 1, dash = "",
): string {
  const d = dash ? ` stroke-dasharray="${dash}"` : "";
  return `<line x1="${x1}" y1="${y1}" x2="${x2}" y2="${y2}" ` +
    `stroke="${stroke}" stroke-width="${width}"${d}/>`;
}

export function polyline(pts: [number, number][], stroke: string, width = 2): string {
  const p = pts.map(([x, y]) => `${round(x)},${round(y)}`).join(" ");
  return `<polyline points="${p}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`;
}

export function rect(
  x: number, y: number, w: number, h: number, fill: string,
): string {
  return `<rect x="${round(x)}" y="${round(y)}" width="${round(w)}" ` +
    `height="${round(h)}" fill="${fill}"/>`;
}

export function circle(x: number, y: number, r: number, fill: string): string {
  return `<circle cx="${round(x)}" cy="${round(y)}" r="${r}" fill="${fill}"/>`;
}

export function round(v: number): number {
  return Math.round(v * 100) / 100;
}

export function svgDocument(body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}">`,
    `<rect x="0" y="0" width="${WIDTH}" height="${HEIGHT}" fill="#ffffff"/>`,
    ...body,
    "</svg>",
    "",
  ].join("\n");
}
