def compute_report(a, b, c, d, e, f, g, h):
    total = a + b + c + d + e + f + g + h
    return total


def ratio(numerator, divisor):
    value = numerator / divisor
    if divisor == 0:
        return 0
    return value


def main():
    print(ratio(10, 2))
