// Batch conversion of a labels directory into a detection record stream.
//
// Label files carry a sortable frame index in the name (frame_000123.txt,
// 000123.txt, img-123.txt all work: the last run of digits wins). Records
// come out ordered by frame, so the result always parses as a valid stream.

import * as fs from 'node:fs';
import * as path from 'node:path';

import { DetectionRecord, ParseOptions, denormalize, parseLabelRow, recordToLine } from './labels.js';

export interface ConvertOptions {
    labelsDir: string;
    classNames: string[];
    imageWidth: number;
    imageHeight: number;
    fps: number;
    cornerFormat?: boolean;
}

export interface ConvertResult {
    records: DetectionRecord[];
    frames: number;
    durationS: number;
    warnings: string[];
}

const FRAME_INDEX = /(\d+)(?!.*\d)/; // last run of digits in the base name

export function frameIndexOf(fileName: string): number {
    const base = path.basename(fileName, path.extname(fileName));
    const match = FRAME_INDEX.exec(base);
    if (!match) {
        throw new Error(`cannot extract a frame index from ${JSON.stringify(fileName)}`);
    }
    return parseInt(match[1], 10);
}

export function convertLabels(opts: ConvertOptions): ConvertResult {
    if (opts.imageWidth <= 0 || opts.imageHeight <= 0) {
        throw new Error('image size must be positive');
    }
    if (opts.fps <= 0) {
        throw new Error('fps must be positive');
    }
    const files = fs
        .readdirSync(opts.labelsDir)
        .filter(name => name.endsWith('.txt'))
        .map(name => ({ name, frame: frameIndexOf(name) }))
        .sort((a, b) => a.frame - b.frame || a.name.localeCompare(b.name));

    const records: DetectionRecord[] = [];
    const warnings: string[] = [];
    for (const file of files) {
        const text = fs.readFileSync(path.join(opts.labelsDir, file.name), 'utf8');
        let warnedMissingConfidence = false;
        text.split('\n').forEach((lineText, i) => {
            const parseOpts: ParseOptions = {
                cornerFormat: opts.cornerFormat,
                source: file.name,
                line: i + 1,
            };
            const row = parseLabelRow(lineText, parseOpts);
            if (row === null) {
                return;
            }
            if (row.confidence === undefined && !warnedMissingConfidence) {
                warnings.push(`${file.name}: no confidence column, defaulting to 1.0`);
                warnedMissingConfidence = true;
            }
            const record = denormalize(row, opts.classNames, opts.imageWidth, opts.imageHeight, parseOpts);
            record.frame = file.frame;
            records.push(record);
        });
    }
    const maxFrame = files.length > 0 ? files[files.length - 1].frame : 0;
    return {
        records,
        frames: files.length,
        durationS: maxFrame / opts.fps,
        warnings,
    };
}

export function serializeRecords(records: DetectionRecord[]): string {
    return records.map(recordToLine).join('\n') + (records.length > 0 ? '\n' : '');
}

export function readClassNames(filePath: string): string[] {
    const text = fs.readFileSync(filePath, 'utf8').trim();
    if (text.startsWith('[')) {
        const names = JSON.parse(text);
        if (!Array.isArray(names) || names.some(n => typeof n !== 'string')) {
            throw new Error(`${filePath}: JSON class list must be an array of strings`);
        }
        return names;
    }
    const names = text
        .split('\n')
        .map(line => line.trim())
        .filter(line => line.length > 0);
    if (names.length === 0) {
        throw new Error(`${filePath}: empty class list`);
    }
    return names;
}
