/**
 * Spawns the Python service on deterministic synthetic data and waits
 * until it accepts requests. Each caller gets a private server, workdir,
 * and decision log.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { rm } from "node:fs/promises";
import { fileURLToPath } from "node:url";

export interface FixtureServer {
  baseUrl: string;
  workdir: string;
  artifacts: string;
  bankPath: string;
  decisionLog: string;
  stop(): Promise<void>;
}

interface ReadyLine {
  port: number;
  workdir: string;
  artifacts: string;
  bankPath: string;
  decisionLog: string;
}

const SCRIPT = fileURLToPath(new URL("./serve_fixture.py", import.meta.url));

function waitForReadyLine(proc: ChildProcess, stderr: string[]): Promise<ReadyLine> {
  return new Promise((resolve, reject) => {
    let buffer = "";
    const timer = setTimeout(() => {
      reject(new Error(`fixture server never became ready\n${stderr.join("")}`));
    }, 90_000);
    proc.stdout?.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const newline = buffer.indexOf("\n");
      if (newline >= 0) {
        clearTimeout(timer);
        resolve(JSON.parse(buffer.slice(0, newline)) as ReadyLine);
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`fixture server exited early (${code})\n${stderr.join("")}`));
    });
  });
}

async function waitForHttp(baseUrl: string): Promise<void> {
  const deadline = Date.now() + 30_000;
  let lastError: unknown = null;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`${baseUrl}/v1/bank`);
      if (res.ok) return;
    } catch (err) {
      lastError = err;
    }
    await new Promise((r) => setTimeout(r, 100));
  }
  throw new Error(`fixture server not answering: ${lastError}`);
}

export async function startFixtureServer(
  opts: { classes?: number; conversations?: number; seed?: number } = {},
): Promise<FixtureServer> {
  const args = [
    SCRIPT,
    "--classes",
    String(opts.classes ?? 8),
    "--conversations",
    String(opts.conversations ?? 300),
    "--seed",
    String(opts.seed ?? 1),
  ];
  const proc = spawn("python3", args, { stdio: ["ignore", "pipe", "pipe"] });
  const stderr: string[] = [];
  proc.stderr?.on("data", (chunk: Buffer) => stderr.push(chunk.toString()));

  const ready = await waitForReadyLine(proc, stderr);
  const baseUrl = `http://127.0.0.1:${ready.port}`;
  await waitForHttp(baseUrl);

  return {
    baseUrl,
    workdir: ready.workdir,
    artifacts: ready.artifacts,
    bankPath: ready.bankPath,
    decisionLog: ready.decisionLog,
    async stop(): Promise<void> {
      proc.kill("SIGTERM");
      await new Promise<void>((resolve) => {
        const force = setTimeout(() => {
          proc.kill("SIGKILL");
          resolve();
        }, 5_000);
        proc.on("exit", () => {
          clearTimeout(force);
          resolve();
        });
      });
      await rm(ready.workdir, { recursive: true, force: true });
    },
  };
}
