/**
 * usage: node dist/cli.js render <recipe.json> -o <out.svg>
 *
 * Reads the recipe, loads its CSV (path relative to the recipe file) and
 * writes the rendered SVG. Exits 1 with the offending column/file in the
 * message on any validation error.
 */

import { mkdirSync, readFileSync, writeFileSync } from "fs";
import { basename, dirname, resolve } from "path";

import { parseCsv } from "./csv.js";
import { loadRecipe } from "./recipe.js";
import { render } from "./render.js";

export function renderFile(recipePath: string): string {
  const recipe = loadRecipe(recipePath);
  const csvPath = resolve(dirname(recipePath), recipe.input);
  const table = parseCsv(readFileSync(csvPath, "utf-8"), basename(csvPath));
  return render(recipe, table);
}

function main(argv: string[]): number {
  if (argv[0] !== "render" || argv.length < 2) {
    console.error("usage: render <recipe.json> -o <out.svg>");
    return 2;
  }
  const recipePath = argv[1];
  const oFlag = argv.indexOf("-o");
  const out = oFlag >= 0 ? argv[oFlag + 1] : undefined;
  if (!out) {
    console.error("usage: render <recipe.json> -o <out.svg>");
    return 2;
  }
  try {
    const svg = renderFile(recipePath);
    mkdirSync(dirname(resolve(out)), { recursive: true });
    writeFileSync(out, svg);
    console.log(out);
    return 0;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
