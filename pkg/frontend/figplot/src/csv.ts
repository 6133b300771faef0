/**
 * Reader for the simulator's CSV logs.
 *
 * Every log starts with a provenance comment line
 *   # provenance: scenario=<hash> seed=<n> version=<v>
 * followed by a header row and comma-separated data rows.  Files without the
 * provenance line are refused: they were not produced by the simulator.
 */

import { readFileSync } from "fs";

export interface CsvTable {
  provenance: string;
  columns: string[];
  rows: string[][];
}

export class MissingColumnError extends Error {
  constructor(public column: string, public path: string) {
    super(`column '${column}' not present in ${path}`);
    this.name = "MissingColumnError";
  }
}

export function readCsv(path: string): CsvTable {
  const text = readFileSync(path, "utf8");
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length < 2 || !lines[0].startsWith("# provenance:")) {
    throw new Error(`${path}: missing provenance comment line; refusing to plot`);
  }
  const provenance = lines[0].slice(1).trim();
  const columns = lines[1].split(",");
  const rows = lines.slice(2).map((l) => l.split(","));
  return { provenance, columns, rows };
}

export function numericColumn(table: CsvTable, name: string, path: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) throw new MissingColumnError(name, path);
  return table.rows.map((r) => Number(r[idx]));
}

export function stringColumn(table: CsvTable, name: string, path: string): string[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) throw new MissingColumnError(name, path);
  return table.rows.map((r) => r[idx]);
}
