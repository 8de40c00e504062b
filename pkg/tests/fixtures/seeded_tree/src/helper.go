package helper

func Join(parts []string) string {
	out := ""
	for _, p := range parts {
		out = out + p + ","
	}
	return out
}
