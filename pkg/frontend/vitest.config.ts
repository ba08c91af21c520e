import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    // the e2e test boots the python eval-service, which takes a moment
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
