import { describe, expect, it } from "vitest";
import { Ring } from "../src/ring.js";

describe("ring buffer", () => {
  it("keeps insertion order below capacity", () => {
    const r = new Ring<number>(4);
    r.push(1);
    r.push(2);
    r.push(3);
    expect(r.toArray()).toEqual([1, 2, 3]);
    expect(r.length).toBe(3);
    expect(r.last()).toBe(3);
  });

  it("drops the oldest once full", () => {
    const r = new Ring<number>(3);
    for (const n of [1, 2, 3, 4, 5]) r.push(n);
    expect(r.toArray()).toEqual([3, 4, 5]);
    expect(r.length).toBe(3);
    expect(r.at(0)).toBe(3);
    expect(r.last()).toBe(5);
  });

  it("stays bounded under sustained pushes", () => {
    const r = new Ring<number>(10);
    for (let i = 0; i < 1000; i++) r.push(i);
    expect(r.length).toBe(10);
    expect(r.toArray()).toEqual([990, 991, 992, 993, 994, 995, 996, 997, 998, 999]);
  });

  it("clears to empty", () => {
    const r = new Ring<number>(2);
    r.push(1);
    r.push(2);
    r.push(3);
    r.clear();
    expect(r.length).toBe(0);
    expect(r.last()).toBeNull();
    r.push(9);
    expect(r.toArray()).toEqual([9]);
  });

  it("rejects silly capacities and out-of-range reads", () => {
    expect(() => new Ring(0)).toThrow(RangeError);
    const r = new Ring<number>(2);
    expect(() => r.at(0)).toThrow(RangeError);
  });
});
