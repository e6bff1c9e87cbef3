#!/usr/bin/env node
/**
 * plot --spec <file>
 *
 * Reads a figure spec (JSON: kind, inputs, output, title?), renders the
 * figure from mmwlink CSV results, and writes the SVG image plus a
 * plotted-points manifest and caption sidecar next to it.
 */

import { readFileSync } from "fs";
import { renderToFiles, validateSpec } from "./render.js";
import { SchemaError } from "./schema.js";

function usage(): string {
  return "usage: plot --spec <figure-spec.json>";
}

export function main(argv: string[]): number {
  const args = argv.slice(2);
  let specPath: string | undefined;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--spec") {
      specPath = args[++i];
    } else if (args[i] === "--help" || args[i] === "-h") {
      console.log(usage());
      return 0;
    } else {
      console.error(`unknown argument: ${args[i]}\n${usage()}`);
      return 2;
    }
  }
  if (!specPath) {
    console.error(usage());
    return 2;
  }
  try {
    const raw = JSON.parse(readFileSync(specPath, "utf-8"));
    const spec = validateSpec(raw);
    const out = renderToFiles(spec);
    console.log(out.image);
    console.log(out.manifest);
    console.log(out.caption);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError || err instanceof SyntaxError ||
        (err as NodeJS.ErrnoException).code === "ENOENT") {
      console.error(`error: ${(err as Error).message}`);
      return 1;
    }
    throw err;
  }
}

const invokedDirectly = process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv));
}
