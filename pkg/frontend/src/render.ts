/**
 * Figure renderers. Each renderer consumes validated CSV rows and produces
 * an SVG string, a caption, and a plotted-points manifest that lists every
 * data point taken from the CSV, so plots are testable without comparing
 * image bytes.
 */

import { existsSync, writeFileSync } from "fs";
import { ParsedCsv, parseCsv, SchemaError, SerRow, ConvergenceRow, RuntimeRow } from "./schema.js";
import * as svg from "./svg.js";

export type FigureKind = "ser_curve" | "convergence_bars" | "runtime_table";

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  title?: string;
}

export interface Manifest {
  schema: "mmwlink-plot-manifest v1";
  kind: FigureKind;
  sources: string[];
  series: { label: string; points: Record<string, unknown>[] }[];
}

export interface Rendered {
  svg: string;
  caption: string;
  manifest: Manifest;
}

const WIDTH = 640;
const HEIGHT = 420;
const MARGIN = { top: 36, right: 24, bottom: 48, left: 64 };

export function validateSpec(raw: unknown): FigureSpec {
  if (typeof raw !== "object" || raw === null) {
    throw new SchemaError("figure spec must be a JSON object");
  }
  const spec = raw as Record<string, unknown>;
  const kinds: FigureKind[] = ["ser_curve", "convergence_bars", "runtime_table"];
  if (!kinds.includes(spec.kind as FigureKind)) {
    throw new SchemaError(
      `figure spec field 'kind' must be one of ${kinds.join(", ")}`);
  }
  if (!Array.isArray(spec.inputs) || spec.inputs.length === 0 ||
      !spec.inputs.every((p) => typeof p === "string")) {
    throw new SchemaError("figure spec field 'inputs' must be a nonempty string array");
  }
  if (typeof spec.output !== "string" || spec.output.length === 0) {
    throw new SchemaError("figure spec field 'output' must be a path string");
  }
  for (const input of spec.inputs as string[]) {
    if (!existsSync(input)) {
      throw new SchemaError(`input CSV does not exist: ${input}`);
    }
  }
  return {
    kind: spec.kind as FigureKind,
    inputs: spec.inputs as string[],
    output: spec.output,
    title: typeof spec.title === "string" ? spec.title : undefined,
  };
}

function axis(x: svg.LinearScale | svg.Log10Scale, y: svg.LinearScale | svg.Log10Scale,
              xLabel: string, yLabel: string, yLog: boolean): string[] {
  const body: string[] = [];
  const x0 = MARGIN.left;
  const x1 = WIDTH - MARGIN.right;
  const y0 = HEIGHT - MARGIN.bottom;
  const y1 = MARGIN.top;
  body.push(svg.line(x0, y0, x1, y0));
  body.push(svg.line(x0, y0, x0, y1));
  for (const t of x.ticks(6)) {
    const px = x.map(t);
    body.push(svg.line(px, y0, px, y0 + 4));
    body.push(svg.text(px, y0 + 16, Number(t.toFixed(4)).toString(),
                       { anchor: "middle" }));
  }
  const yTicks = yLog ? (y as svg.Log10Scale).ticks() : (y as svg.LinearScale).ticks(5);
  for (const t of yTicks) {
    const py = y.map(t);
    body.push(svg.line(x0 - 4, py, x0, py));
    const label = yLog ? `1e${Math.round(Math.log10(t))}`
      : Number(t.toPrecision(3)).toString();
    body.push(svg.text(x0 - 8, py + 4, label, { anchor: "end" }));
  }
  body.push(svg.text((x0 + x1) / 2, HEIGHT - 10, xLabel, { anchor: "middle", size: 12 }));
  body.push(svg.text(14, (y0 + y1) / 2, yLabel,
                     { anchor: "middle", size: 12, rotate: -90 }));
  return body;
}

function legend(labels: string[], colors: string[], dashed: boolean[]): string[] {
  const body: string[] = [];
  let y = MARGIN.top + 6;
  const x = WIDTH - MARGIN.right - 190;
  labels.forEach((label, k) => {
    body.push(svg.polyline([[x, y], [x + 26, y]], colors[k], 2,
                           dashed[k] ? "5,3" : ""));
    body.push(svg.text(x + 32, y + 4, label));
    y += 16;
  });
  return body;
}

function renderSerCurve(tables: ParsedCsv[], title?: string): Rendered {
  const rows = tables.flatMap((t) => t.rows) as unknown as SerRow[];
  const usable = rows.filter((r) => r.status === "ok");
  if (usable.length === 0) {
    throw new SchemaError("no plottable records in the input CSVs");
  }
  const byseries = new Map<string, SerRow[]>();
  for (const row of usable) {
    const label = row.detector === "sbrnn" && row.train_mode !== "-"
      ? `${row.detector} (train ${row.train_mode})`
      : row.detector;
    if (!byseries.has(label)) {
      byseries.set(label, []);
    }
    byseries.get(label)!.push(row);
  }

  const snrs = usable.map((r) => r.snr_db);
  const positive = usable.map((r) => r.ser).filter((v) => v > 0);
  const yLo = positive.length ? Math.min(...positive) / 2 : 1e-6;
  const yHi = Math.max(...usable.map((r) => Math.max(r.ser, r.ci_high)), yLo * 10);
  const xScale = new svg.LinearScale(Math.min(...snrs), Math.max(...snrs),
                                     MARGIN.left, WIDTH - MARGIN.right);
  const yScale = new svg.Log10Scale(yLo, yHi, HEIGHT - MARGIN.bottom, MARGIN.top);

  const body = axis(xScale, yScale, "SNR (dB)", "SER", true);
  const labels = [...byseries.keys()].sort();
  const series: Manifest["series"] = [];
  labels.forEach((label, k) => {
    const color = svg.PALETTE[k % svg.PALETTE.length];
    const pts = byseries.get(label)!;
    // visual line through per-SNR means; every raw point stays a marker
    const bySnr = new Map<number, number[]>();
    for (const p of pts) {
      if (!bySnr.has(p.snr_db)) {
        bySnr.set(p.snr_db, []);
      }
      bySnr.get(p.snr_db)!.push(p.ser);
    }
    const meanLine = [...bySnr.entries()]
      .map(([s, v]) => [s, v.reduce((a, b) => a + b, 0) / v.length] as [number, number])
      .sort((a, b) => a[0] - b[0]);
    body.push(svg.polyline(
      meanLine.map(([s, v]) => [xScale.map(s), yScale.map(v)]), color, 1.8,
      label.startsWith("viterbi_cut") ? "5,3" : ""));
    for (const p of pts) {
      const px = xScale.map(p.snr_db);
      body.push(svg.line(px, yScale.map(Math.max(p.ci_low, yLo / 2)),
                         px, yScale.map(Math.max(p.ci_high, yLo / 2)),
                         color, 0.8));
      body.push(svg.circle(px, yScale.map(p.ser), 2.4, color));
    }
    series.push({
      label,
      points: pts.map((p) => ({
        snr_db: p.snr_db, ser: p.ser, ci_low: p.ci_low, ci_high: p.ci_high,
        channel_index: p.channel_index, errors: p.errors, symbols: p.symbols,
      })),
    });
  });
  body.push(...legend(labels,
                      labels.map((_, k) => svg.PALETTE[k % svg.PALETTE.length]),
                      labels.map((l) => l.startsWith("viterbi_cut"))));
  if (title) {
    body.push(svg.text(WIDTH / 2, 20, title, { anchor: "middle", size: 14 }));
  }
  const trainModes = [...new Set(usable
    .filter((r) => r.detector === "sbrnn").map((r) => r.train_mode))];
  const caption =
    `Symbol error rate vs SNR (log scale) for ${labels.length} detector ` +
    `series over ${new Set(usable.map((r) => r.channel_index)).size} channel ` +
    `realization(s); markers show per-channel estimates with 95% intervals` +
    (trainModes.length ? `; detector training mode: ${trainModes.join(", ")}.` : ".");
  return {
    svg: svg.document(WIDTH, HEIGHT, body),
    caption,
    manifest: {
      schema: "mmwlink-plot-manifest v1", kind: "ser_curve",
      sources: tables.map((t) => t.path), series,
    },
  };
}

function renderConvergenceBars(tables: ParsedCsv[], title?: string): Rendered {
  const rows = tables.flatMap((t) => t.rows) as unknown as ConvergenceRow[];
  if (rows.length === 0) {
    throw new SchemaError("no plottable records in the input CSVs");
  }
  // Harness already sorts by warm-start count; keep row order.
  const n = rows.length;
  const yHi = Math.max(...rows.map((r) => Math.max(r.samples_scratch, r.samples_warm)));
  const xScale = new svg.LinearScale(0, n, MARGIN.left, WIDTH - MARGIN.right);
  const yScale = new svg.LinearScale(0, yHi * 1.1, HEIGHT - MARGIN.bottom, MARGIN.top);
  const body = axis(xScale, yScale, "channel (sorted by warm-start samples)",
                    "training samples to threshold", false);
  const slot = (WIDTH - MARGIN.left - MARGIN.right) / n;
  const barW = slot * 0.32;
  rows.forEach((r, k) => {
    const cx = xScale.map(k + 0.5);
    const y0 = yScale.map(0);
    body.push(svg.rect(cx - barW, yScale.map(r.samples_warm), barW,
                       y0 - yScale.map(r.samples_warm), svg.PALETTE[0]));
    body.push(svg.rect(cx, yScale.map(r.samples_scratch), barW,
                       y0 - yScale.map(r.samples_scratch), svg.PALETTE[1],
                       { opacity: 0.55 }));
    body.push(svg.text(cx, HEIGHT - MARGIN.bottom + 16,
                       String(r.channel_index), { anchor: "middle" }));
  });
  body.push(...legend(["warm start", "from scratch"],
                      [svg.PALETTE[0], svg.PALETTE[1]], [false, false]));
  if (title) {
    body.push(svg.text(WIDTH / 2, 20, title, { anchor: "middle", size: 14 }));
  }
  const caption =
    `Training samples needed to reach ${rows[0].threshold * 100}% detection ` +
    `accuracy on ${n} fresh channel realizations, warm-started vs from ` +
    `scratch, sorted by the warm-start count.`;
  return {
    svg: svg.document(WIDTH, HEIGHT, body),
    caption,
    manifest: {
      schema: "mmwlink-plot-manifest v1", kind: "convergence_bars",
      sources: tables.map((t) => t.path),
      series: [
        { label: "warm", points: rows.map((r) => ({
          channel_index: r.channel_index, samples: r.samples_warm,
          reached: r.reached_warm })) },
        { label: "scratch", points: rows.map((r) => ({
          channel_index: r.channel_index, samples: r.samples_scratch,
          reached: r.reached_scratch })) },
      ],
    },
  };
}

function renderRuntimeTable(tables: ParsedCsv[], title?: string): Rendered {
  const rows = tables.flatMap((t) => t.rows) as unknown as RuntimeRow[];
  const usable = rows.filter((r) => r.detector !== "noop");
  if (usable.length === 0) {
    throw new SchemaError("no plottable records in the input CSVs");
  }
  const body: string[] = [];
  if (title) {
    body.push(svg.text(WIDTH / 2, 24, title, { anchor: "middle", size: 14 }));
  }
  const header = ["detector", "antennas", "blocks", "mean time / block"];
  const colX = [40, 260, 370, 470];
  let y = 64;
  header.forEach((h, k) => body.push(svg.text(colX[k], y, h, { size: 12 })));
  body.push(svg.line(36, y + 6, WIDTH - 36, y + 6));
  y += 24;
  for (const r of usable) {
    body.push(svg.text(colX[0], y, r.detector));
    body.push(svg.text(colX[1], y, String(r.num_antennas)));
    body.push(svg.text(colX[2], y, String(r.blocks)));
    body.push(svg.text(colX[3], y, `${(r.mean_time_per_block * 1000).toFixed(2)} ms`));
    y += 20;
  }
  const height = y + 24;
  const caption =
    `Average per-block detection time for ${usable.length} detector/array ` +
    `configurations (noop calibration rows omitted from the table).`;
  return {
    svg: svg.document(WIDTH, height, body),
    caption,
    manifest: {
      schema: "mmwlink-plot-manifest v1", kind: "runtime_table",
      sources: tables.map((t) => t.path),
      series: [{ label: "runtime", points: rows.map((r) => ({
        detector: r.detector, num_antennas: r.num_antennas,
        blocks: r.blocks, mean_time_per_block: r.mean_time_per_block })) }],
    },
  };
}

const CSV_KIND: Record<FigureKind, "ser" | "convergence" | "runtime"> = {
  ser_curve: "ser",
  convergence_bars: "convergence",
  runtime_table: "runtime",
};

export function render(spec: FigureSpec): Rendered {
  const tables = spec.inputs.map((p) => parseCsv(p, CSV_KIND[spec.kind]));
  switch (spec.kind) {
    case "ser_curve":
      return renderSerCurve(tables, spec.title);
    case "convergence_bars":
      return renderConvergenceBars(tables, spec.title);
    case "runtime_table":
      return renderRuntimeTable(tables, spec.title);
  }
}

export function renderToFiles(spec: FigureSpec): { image: string; manifest: string; caption: string } {
  const result = render(spec);
  const manifestPath = `${spec.output}.manifest.json`;
  const captionPath = `${spec.output}.caption.txt`;
  writeFileSync(spec.output, result.svg);
  writeFileSync(manifestPath, JSON.stringify(result.manifest, null, 2) + "\n");
  writeFileSync(captionPath, result.caption + "\n");
  return { image: spec.output, manifest: manifestPath, caption: result.caption };
}
