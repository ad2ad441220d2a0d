/**
 * Minimal CSV reader for the simulator's outputs: comma-delimited,
 * LF line endings, `.` decimal separator, no quoting.
 */

export interface Table {
  name: string;
  columns: string[];
  rows: Record<string, string>[];
}

export function parseCsv(text: string, name: string): Table {
  const lines = text.split("\n").filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    throw new Error(`${name}: empty CSV`);
  }
  const columns = lines[0].split(",").map((c) => c.trim());
  const rows = lines.slice(1).map((line) => {
    const cells = line.split(",");
    const row: Record<string, string> = {};
    columns.forEach((c, i) => {
      row[c] = (cells[i] ?? "").trim();
    });
    return row;
  });
  if (rows.length === 0) {
    throw new Error(`${name}: CSV has a header but no data rows`);
  }
  return { name, columns, rows };
}

export function requireColumn(table: Table, column: string): void {
  if (!table.columns.includes(column)) {
    throw new Error(
      `${table.name}: column '${column}' not found (have: ${table.columns.join(", ")})`,
    );
  }
}

export function numbers(table: Table, column: string): number[] {
  requireColumn(table, column);
  return table.rows.map((r) => {
    const v = Number(r[column]);
    if (!Number.isFinite(v)) {
      throw new Error(`${table.name}: column '${column}' holds non-numeric '${r[column]}'`);
    }
    return v;
  });
}
