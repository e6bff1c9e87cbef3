/**
 * Typed parsing and validation of mmwlink experiment CSVs.
 *
 * Every file starts with a `# mmwlink-csv <kind> v<n>` comment line followed
 * by a header row. Validation failures always name the offending column.
 */

import { readFileSync } from "fs";

export class SchemaError extends Error {}

export type CsvKind = "ser" | "convergence" | "runtime";

export interface SerRow {
  detector: string;
  train_mode: string;
  snr_db: number;
  channel_index: number;
  errors: number;
  symbols: number;
  ser: number;
  ci_low: number;
  ci_high: number;
  wall_time_per_block: number;
  rx_hash: string;
  seed: number;
  config_hash: string;
  status: string;
}

export interface ConvergenceRow {
  channel_index: number;
  samples_scratch: number;
  samples_warm: number;
  reached_scratch: boolean;
  reached_warm: boolean;
  threshold: number;
  seed: number;
  config_hash: string;
}

export interface RuntimeRow {
  detector: string;
  num_antennas: number;
  blocks: number;
  mean_time_per_block: number;
  seed: number;
  config_hash: string;
}

type ColumnType = "string" | "number" | "boolean";

const SCHEMAS: Record<CsvKind, Record<string, ColumnType>> = {
  ser: {
    detector: "string",
    train_mode: "string",
    snr_db: "number",
    channel_index: "number",
    errors: "number",
    symbols: "number",
    ser: "number",
    ci_low: "number",
    ci_high: "number",
    wall_time_per_block: "number",
    rx_hash: "string",
    seed: "number",
    config_hash: "string",
    status: "string",
  },
  convergence: {
    channel_index: "number",
    samples_scratch: "number",
    samples_warm: "number",
    reached_scratch: "boolean",
    reached_warm: "boolean",
    threshold: "number",
    seed: "number",
    config_hash: "string",
  },
  runtime: {
    detector: "string",
    num_antennas: "number",
    blocks: "number",
    mean_time_per_block: "number",
    seed: "number",
    config_hash: "string",
  },
};

export interface ParsedCsv {
  kind: CsvKind;
  rows: Record<string, string | number | boolean>[];
  path: string;
}

function convert(raw: string, type: ColumnType, column: string,
                 line: number): string | number | boolean {
  if (type === "number") {
    const value = Number(raw);
    if (raw === "" || Number.isNaN(value)) {
      throw new SchemaError(
        `column '${column}': expected a number, got '${raw}' (row ${line})`);
    }
    return value;
  }
  if (type === "boolean") {
    if (raw !== "true" && raw !== "false") {
      throw new SchemaError(
        `column '${column}': expected true/false, got '${raw}' (row ${line})`);
    }
    return raw === "true";
  }
  return raw;
}

export function parseCsv(path: string, expectedKind?: CsvKind): ParsedCsv {
  const text = readFileSync(path, "utf-8");
  const lines = text.split("\n").filter((l) => l.length > 0);
  if (lines.length < 1 || !lines[0].startsWith("# mmwlink-csv ")) {
    throw new SchemaError(`${path}: missing schema header comment`);
  }
  const kind = lines[0].split(/\s+/)[2] as CsvKind;
  if (!(kind in SCHEMAS)) {
    throw new SchemaError(`${path}: unknown csv kind '${kind}'`);
  }
  if (expectedKind && kind !== expectedKind) {
    throw new SchemaError(
      `${path}: expected kind '${expectedKind}', found '${kind}'`);
  }
  const schema = SCHEMAS[kind];
  const header = (lines[1] ?? "").split(",");
  for (const column of Object.keys(schema)) {
    if (!header.includes(column)) {
      throw new SchemaError(`${path}: missing column '${column}'`);
    }
  }
  const rows: Record<string, string | number | boolean>[] = [];
  for (let i = 2; i < lines.length; i++) {
    const fields = lines[i].split(",");
    if (fields.length !== header.length) {
      throw new SchemaError(
        `${path}: row ${i + 1} has ${fields.length} fields, ` +
        `header has ${header.length}`);
    }
    const row: Record<string, string | number | boolean> = {};
    header.forEach((column, k) => {
      const type = schema[column];
      row[column] = type === undefined
        ? fields[k]
        : convert(fields[k], type, column, i + 1);
    });
    rows.push(row);
  }
  return { kind, rows, path };
}
