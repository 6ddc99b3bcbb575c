// Optional dependency, loaded dynamically; typed as any so builds succeed
// without it installed.
declare module "@xenova/transformers";
