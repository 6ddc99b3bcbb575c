import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    // extraction tests embed dozens of augmented views; give them headroom
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
