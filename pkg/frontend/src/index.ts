export * from "./rle.js";
export * from "./classes.js";
export * from "./api.js";
export * from "./workflow.js";
