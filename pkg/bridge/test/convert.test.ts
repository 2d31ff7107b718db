import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

import { afterEach, beforeEach, describe, expect, it } from 'vitest';

import { convertLabels, frameIndexOf, readClassNames, serializeRecords } from '../src/convert.js';

let dir: string;

beforeEach(() => {
    dir = fs.mkdtempSync(path.join(os.tmpdir(), 'bridge-'));
});

afterEach(() => {
    fs.rmSync(dir, { recursive: true, force: true });
});

const OPTS = {
    classNames: ['motorcycle', 'car', 'bus'],
    imageWidth: 320,
    imageHeight: 240,
    fps: 15,
};

describe('frameIndexOf', () => {
    it('extracts the trailing digit run', () => {
        expect(frameIndexOf('frame_000123.txt')).toBe(123);
        expect(frameIndexOf('000007.txt')).toBe(7);
        expect(frameIndexOf('cam2-view_0042.txt')).toBe(42);
    });

    it('rejects names without digits', () => {
        expect(() => frameIndexOf('labels.txt')).toThrow();
    });
});

describe('convertLabels', () => {
    it('orders records by frame and fills indices', () => {
        fs.writeFileSync(path.join(dir, 'frame_000002.txt'), '1 0.5 0.5 0.1 0.2 0.9\n');
        fs.writeFileSync(path.join(dir, 'frame_000000.txt'), '1 0.3 0.4 0.1 0.2 0.8\n2 0.7 0.6 0.2 0.2 0.7\n');
        const result = convertLabels({ labelsDir: dir, ...OPTS });
        expect(result.records.map(r => r.frame)).toEqual([0, 0, 2]);
        expect(result.records[1].cls).toBe('bus');
        expect(result.frames).toBe(2);
        expect(result.durationS).toBeCloseTo(2 / 15, 9);
    });

    it('warns once per file on missing confidence', () => {
        fs.writeFileSync(path.join(dir, '000000.txt'), '0 0.5 0.5 0.1 0.1\n1 0.2 0.2 0.1 0.1\n');
        const result = convertLabels({ labelsDir: dir, ...OPTS });
        expect(result.warnings).toHaveLength(1);
        expect(result.records.every(r => r.score === 1.0)).toBe(true);
    });

    it('propagates row errors with file and line', () => {
        fs.writeFileSync(path.join(dir, '000000.txt'), '1 0.5 0.5 0.1\n');
        expect(() => convertLabels({ labelsDir: dir, ...OPTS })).toThrow(/000000\.txt:1/);
    });

    it('handles corner format', () => {
        fs.writeFileSync(path.join(dir, '000000.txt'), '1 0.25 0.25 0.75 0.75 0.9\n');
        const result = convertLabels({ labelsDir: dir, ...OPTS, cornerFormat: true });
        expect(result.records[0].bbox[0]).toBeCloseTo(80, 9);
        expect(result.records[0].bbox[2]).toBeCloseTo(160, 9);
    });

    it('serializes one JSON record per line', () => {
        fs.writeFileSync(path.join(dir, '000000.txt'), '1 0.5 0.5 0.1 0.2 0.9\n');
        const result = convertLabels({ labelsDir: dir, ...OPTS });
        const lines = serializeRecords(result.records).trim().split('\n');
        expect(lines).toHaveLength(1);
        const record = JSON.parse(lines[0]);
        expect(record).toEqual({ frame: 0, cls: 'car', bbox: [144, 96, 32, 48], score: 0.9 });
    });
});

describe('readClassNames', () => {
    it('reads one name per line', () => {
        const file = path.join(dir, 'classes.txt');
        fs.writeFileSync(file, 'motorcycle\ncar\n\nbus\n');
        expect(readClassNames(file)).toEqual(['motorcycle', 'car', 'bus']);
    });

    it('reads a JSON array', () => {
        const file = path.join(dir, 'classes.json');
        fs.writeFileSync(file, '["car", "bus"]');
        expect(readClassNames(file)).toEqual(['car', 'bus']);
    });
});
