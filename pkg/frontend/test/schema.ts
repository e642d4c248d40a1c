/** Minimal JSON-schema checker covering the subset the wire schema uses
 * (oneOf, local $ref, const, enum, type, required, properties, items,
 * additionalProperties:false, numeric bounds). Validates viewer output
 * against the render service's published schema file. */

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

type Schema = Record<string, any>;

const here = dirname(fileURLToPath(import.meta.url));
export const PROTOCOL_SCHEMA: Schema = JSON.parse(
  readFileSync(join(here, "..", "..", "src", "gs3", "protocol.schema.json"), "utf-8"),
);

function resolveRef(root: Schema, ref: string): Schema {
  if (!ref.startsWith("#/")) throw new Error(`unsupported $ref ${ref}`);
  let node: any = root;
  for (const part of ref.slice(2).split("/")) node = node[part];
  return node;
}

export function validate(value: unknown, schema: Schema = PROTOCOL_SCHEMA,
                         root: Schema = PROTOCOL_SCHEMA, path = "$"): string[] {
  if (schema.$ref) return validate(value, resolveRef(root, schema.$ref), root, path);

  const errors: string[] = [];
  if (schema.oneOf) {
    const results = schema.oneOf.map((s: Schema) => validate(value, s, root, path));
    if (!results.some((r: string[]) => r.length === 0)) {
      errors.push(`${path}: matched none of oneOf (${results.map((r: string[]) => r[0]).join(" | ")})`);
    }
    return errors;
  }
  if ("const" in schema && value !== schema.const) {
    errors.push(`${path}: expected const ${JSON.stringify(schema.const)}`);
  }
  if (schema.enum && !schema.enum.includes(value)) {
    errors.push(`${path}: ${JSON.stringify(value)} not in ${JSON.stringify(schema.enum)}`);
  }
  if (schema.type === "object") {
    if (typeof value !== "object" || value === null || Array.isArray(value)) {
      return [`${path}: expected object`];
    }
    const obj = value as Record<string, unknown>;
    for (const key of schema.required ?? []) {
      if (!(key in obj)) errors.push(`${path}.${key}: required`);
    }
    for (const [key, sub] of Object.entries(obj)) {
      const prop = schema.properties?.[key];
      if (prop) errors.push(...validate(sub, prop as Schema, root, `${path}.${key}`));
      else if (schema.additionalProperties === false) {
        errors.push(`${path}.${key}: unexpected property`);
      }
    }
  } else if (schema.type === "array") {
    if (!Array.isArray(value)) return [`${path}: expected array`];
    if (schema.minItems !== undefined && value.length < schema.minItems) {
      errors.push(`${path}: fewer than ${schema.minItems} items`);
    }
    if (schema.maxItems !== undefined && value.length > schema.maxItems) {
      errors.push(`${path}: more than ${schema.maxItems} items`);
    }
    if (schema.items) {
      value.forEach((v, i) => errors.push(...validate(v, schema.items, root, `${path}[${i}]`)));
    }
  } else if (schema.type === "number") {
    if (typeof value !== "number" || !Number.isFinite(value)) {
      return [`${path}: expected number`];
    }
    if (schema.minimum !== undefined && value < schema.minimum) {
      errors.push(`${path}: below minimum ${schema.minimum}`);
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      errors.push(`${path}: above maximum ${schema.maximum}`);
    }
    if (schema.exclusiveMinimum !== undefined && value <= schema.exclusiveMinimum) {
      errors.push(`${path}: not above ${schema.exclusiveMinimum}`);
    }
  } else if (schema.type === "integer") {
    if (typeof value !== "number" || !Number.isInteger(value)) {
      return [`${path}: expected integer`];
    }
    if (schema.minimum !== undefined && value < schema.minimum) {
      errors.push(`${path}: below minimum ${schema.minimum}`);
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      errors.push(`${path}: above maximum ${schema.maximum}`);
    }
  } else if (schema.type === "boolean") {
    if (typeof value !== "boolean") errors.push(`${path}: expected boolean`);
  } else if (schema.type === "string") {
    if (typeof value !== "string") errors.push(`${path}: expected string`);
  }
  return errors;
}
