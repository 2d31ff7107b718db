#!/usr/bin/env node
// bridge --labels DIR --classes FILE --width W --height H --fps N --out FILE
//
// Converts a directory of per-image label files into the engine's detection
// record stream (one JSON record per line, ordered by frame).

import * as fs from 'node:fs';
import { pathToFileURL } from 'node:url';

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { convertLabels, readClassNames, serializeRecords } from './convert.js';

export async function main(argv: string[]): Promise<number> {
    const args = await yargs(argv)
        .usage('bridge --labels D --classes F --width W --height H --fps N --out F')
        .option('labels', { type: 'string', demandOption: true, describe: 'directory of label .txt files' })
        .option('classes', { type: 'string', demandOption: true, describe: 'class-name list (one per line or JSON array)' })
        .option('width', { type: 'number', demandOption: true, describe: 'annotated video width in px' })
        .option('height', { type: 'number', demandOption: true, describe: 'annotated video height in px' })
        .option('fps', { type: 'number', demandOption: true, describe: 'annotated video frame rate' })
        .option('out', { type: 'string', demandOption: true, describe: 'output detection stream (.jsonl)' })
        .option('corner-format', { type: 'boolean', default: false, describe: 'rows are normalized corners, not centers' })
        .strict()
        .parse();

    try {
        const result = convertLabels({
            labelsDir: args.labels,
            classNames: readClassNames(args.classes),
            imageWidth: args.width,
            imageHeight: args.height,
            fps: args.fps,
            cornerFormat: args.cornerFormat,
        });
        for (const warning of result.warnings) {
            console.error(`warning: ${warning}`);
        }
        fs.writeFileSync(args.out, serializeRecords(result.records));
        console.error(
            `wrote ${result.records.length} records from ${result.frames} label files ` +
            `(${result.durationS.toFixed(2)}s of video) to ${args.out}`,
        );
        return 0;
    } catch (err) {
        console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
        return 1;
    }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
    main(hideBin(process.argv)).then(code => {
        process.exitCode = code;
    });
}
