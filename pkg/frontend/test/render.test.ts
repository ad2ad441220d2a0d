import { execFileSync } from "child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join, resolve } from "path";
import { describe, expect, it } from "vitest";

import { parseCsv } from "../src/csv.js";
import { loadRecipe } from "../src/recipe.js";
import { render } from "../src/render.js";
import { renderFile } from "../src/cli.js";

const ROOT = resolve(__dirname, "..");
const RECIPES = [
  "dense_bandwidth",
  "strategy_bandwidth",
  "single_buffer_memory",
  "sparse_compare",
  "compare_time_traffic",
];

describe("bundled recipes", () => {
  for (const name of RECIPES) {
    it(`${name} renders from its golden CSV`, () => {
      const svg = renderFile(join(ROOT, "recipes", `${name}.json`));
      expect(svg.startsWith("<svg")).toBe(true);
      expect(svg).toContain("</svg>");
      expect(svg).toMatch(/<polyline|<rect/);
    });
  }

  it("dense-bandwidth figure embeds both reference lines", () => {
    const svg = renderFile(join(ROOT, "recipes", "dense_bandwidth.json"));
    expect(svg).toContain("SwitchML 1.6 Tbps");
    expect(svg).toContain("SHARP 3.2 Tbps");
    expect((svg.match(/stroke-dasharray/g) ?? []).length).toBeGreaterThanOrEqual(2);
  });

  it("rendering is deterministic", () => {
    const a = renderFile(join(ROOT, "recipes", "dense_bandwidth.json"));
    const b = renderFile(join(ROOT, "recipes", "dense_bandwidth.json"));
    expect(a).toEqual(b);
  });
});

describe("validation", () => {
  const goldenCsv = readFileSync(
    join(ROOT, "golden", "fig8_strategies.csv"), "utf-8");

  it("missing column is named in the error", () => {
    const table = parseCsv(goldenCsv, "fig8_strategies.csv");
    expect(() =>
      render(
        { kind: "line_bw", input: "x.csv", x: "data_size", y: "no_such_metric" },
        table,
      ),
    ).toThrow(/no_such_metric/);
  });

  it("empty CSV is rejected", () => {
    expect(() => parseCsv("", "empty.csv")).toThrow(/empty/);
    expect(() => parseCsv("a,b\n", "hdr.csv")).toThrow(/no data rows/);
  });

  it("unknown figure kind is rejected", () => {
    const dir = mkdtempSync(join(tmpdir(), "recipe-"));
    const p = join(dir, "bad.json");
    writeFileSync(p, JSON.stringify({ kind: "pie", input: "x.csv" }));
    expect(() => loadRecipe(p)).toThrow(/unknown figure kind/);
  });

  it("non-numeric metric column is rejected", () => {
    const table = parseCsv("x,y\n1,abc\n", "bad.csv");
    expect(() =>
      render({ kind: "line_bw", input: "b.csv", x: "x", y: "y" }, table),
    ).toThrow(/non-numeric/);
  });
});

describe("cli", () => {
  it("renders to the requested file and fails loudly on bad columns", () => {
    const dir = mkdtempSync(join(tmpdir(), "figout-"));
    const out = join(dir, "dense.svg");
    execFileSync("node", [
      join(ROOT, "dist", "cli.js"), "render",
      join(ROOT, "recipes", "dense_bandwidth.json"), "-o", out,
    ]);
    expect(readFileSync(out, "utf-8")).toContain("SHARP 3.2 Tbps");

    const bad = join(dir, "bad.json");
    writeFileSync(bad, JSON.stringify({
      kind: "line_bw",
      input: join(ROOT, "golden", "fig8_strategies.csv"),
      x: "data_size",
      y: "bogus_column",
    }));
    let code = 0;
    let stderr = "";
    try {
      execFileSync("node", [join(ROOT, "dist", "cli.js"), "render", bad,
        "-o", join(dir, "bad.svg")], { stdio: "pipe" });
    } catch (e: any) {
      code = e.status;
      stderr = String(e.stderr);
    }
    expect(code).toBe(1);
    expect(stderr).toContain("bogus_column");
  });
});
