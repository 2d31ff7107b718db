// Detector label rows: one object per line, normalized to the image size.
//
// The canonical input is the dominant detector-export convention:
//     <class index> <cx> <cy> <w> <h> [confidence]
// with every value in [0, 1]. A corner-format variant
//     <class index> <x min> <y min> <x max> <y max> [confidence]
// is supported behind a flag. Conversion denormalizes to pixel top-left
// boxes in the engine's detection record format.

export interface LabelRow {
    classIndex: number;
    // normalized center + size, regardless of the input variant
    cx: number;
    cy: number;
    w: number;
    h: number;
    confidence?: number;
}

export interface DetectionRecord {
    frame: number;
    cls: string;
    bbox: [number, number, number, number]; // x, y, w, h in pixels, top-left
    score: number;
}

export class BadLabelRow extends Error {
    constructor(source: string, line: number, reason: string) {
        super(`${source}:${line}: ${reason}`);
        this.name = 'BadLabelRow';
    }
}

export class UnknownClassIndex extends Error {
    constructor(source: string, line: number, index: number, known: number) {
        super(`${source}:${line}: class index ${index} outside the ${known}-entry class list`);
        this.name = 'UnknownClassIndex';
    }
}

export interface ParseOptions {
    cornerFormat?: boolean;
    source?: string; // file name for error messages
    line?: number;
}

export function parseLabelRow(text: string, opts: ParseOptions = {}): LabelRow | null {
    const source = opts.source ?? '<row>';
    const line = opts.line ?? 1;
    const fields = text.trim().split(/\s+/).filter(f => f.length > 0);
    if (fields.length === 0) {
        return null; // blank line
    }
    if (fields.length !== 5 && fields.length !== 6) {
        throw new BadLabelRow(source, line, `expected 5 or 6 fields, got ${fields.length}`);
    }
    const numbers = fields.map(Number);
    if (numbers.some(n => Number.isNaN(n))) {
        throw new BadLabelRow(source, line, `non-numeric field in ${JSON.stringify(text.trim())}`);
    }
    const classIndex = numbers[0];
    if (!Number.isInteger(classIndex) || classIndex < 0) {
        throw new BadLabelRow(source, line, `class index must be a non-negative integer, got ${fields[0]}`);
    }
    const values = numbers.slice(1, 5);
    if (values.some(v => v < 0 || v > 1)) {
        throw new BadLabelRow(source, line, `normalized values must lie in [0, 1]: ${JSON.stringify(text.trim())}`);
    }

    let cx: number, cy: number, w: number, h: number;
    if (opts.cornerFormat) {
        const [x0, y0, x1, y1] = values;
        if (x1 <= x0 || y1 <= y0) {
            throw new BadLabelRow(source, line, 'corner box must have max > min on both axes');
        }
        cx = (x0 + x1) / 2;
        cy = (y0 + y1) / 2;
        w = x1 - x0;
        h = y1 - y0;
    } else {
        [cx, cy, w, h] = values;
        if (w <= 0 || h <= 0) {
            throw new BadLabelRow(source, line, 'box size must be positive');
        }
    }

    const row: LabelRow = { classIndex, cx, cy, w, h };
    if (fields.length === 6) {
        const confidence = numbers[5];
        if (confidence < 0 || confidence > 1) {
            throw new BadLabelRow(source, line, `confidence must lie in [0, 1], got ${fields[5]}`);
        }
        row.confidence = confidence;
    }
    return row;
}

export function denormalize(
    row: LabelRow,
    classNames: string[],
    imageWidth: number,
    imageHeight: number,
    opts: ParseOptions = {},
): DetectionRecord {
    if (row.classIndex >= classNames.length) {
        throw new UnknownClassIndex(opts.source ?? '<row>', opts.line ?? 1, row.classIndex, classNames.length);
    }
    return {
        frame: 0, // caller fills the frame index from the file name
        cls: classNames[row.classIndex],
        bbox: [
            row.cx * imageWidth - (row.w * imageWidth) / 2,
            row.cy * imageHeight - (row.h * imageHeight) / 2,
            row.w * imageWidth,
            row.h * imageHeight,
        ],
        score: row.confidence ?? 1.0,
    };
}

export function renormalize(
    bbox: [number, number, number, number],
    imageWidth: number,
    imageHeight: number,
): { cx: number; cy: number; w: number; h: number } {
    const [x, y, w, h] = bbox;
    return {
        cx: (x + w / 2) / imageWidth,
        cy: (y + h / 2) / imageHeight,
        w: w / imageWidth,
        h: h / imageHeight,
    };
}

export function recordToLine(record: DetectionRecord): string {
    return JSON.stringify({
        frame: record.frame,
        cls: record.cls,
        bbox: record.bbox,
        score: record.score,
    });
}
