import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the e2e test trains a small fixture model and launches a real service
    testTimeout: 180_000,
    hookTimeout: 300_000,
  },
});
