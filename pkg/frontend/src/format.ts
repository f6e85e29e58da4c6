/** Display probabilities at three decimals; the exact float stays available
 * for hover so numbers remain checkable against the CLI output. */
export function formatProbability(p: number): string {
  return p.toFixed(3);
}

export function fullPrecision(p: number): string {
  return String(p);
}

export function productLabel(productId: string, category: string, specCount: number): string {
  return `${productId} (${category}, ${specCount} specs)`;
}
