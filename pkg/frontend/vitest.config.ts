import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // Contract and session tests build a pipeline workdir and boot the
    // Python service, which takes a few seconds each.
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
